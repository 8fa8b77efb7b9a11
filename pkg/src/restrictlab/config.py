"""Config-driven experiment runs.

A config is a JSON object {name, surface, boxes, grid, sweep, gates, seed,
experiments: [...]}.  Each experiment entry has a ``kind`` and optional
overrides of the top-level keys.  ``run_config`` writes report.json (a
versioned manifest), one CSV per sweep and optional gnuplot scripts, and
returns the process exit code.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import errors as E
from .conditions import all_conditions
from .experiments import (
    SweepReport, _jsonable, bilinear_growth_sweep, bilinear_threshold, complex_failure_demo, knapp_sweep,
    linear_threshold, necessary_exponent_sweep, product_threshold, stationary_box_lower,
    whitney_bilinear_pipeline,
)
from .fieldio import write_csv
from .surfaces import Box, surface_from_json

REPORT_SCHEMA = "restrictlab.report/1"
EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL = 0, 2, 3, 4

REFUSALS = (E.ConditionNotMet, E.PreconditionFailed, E.ScaleMismatch, E.EmptyBox)
NUMERICAL = (E.ResolutionTooCoarse, E.GridTooCoarse, E.TailNotConverged, E.NoConvergence, E.LeftBox,
             E.SingularHessian, E.RankDeficientD, E.InsufficientStrata, E.NormalFormFailed)


# -- loading -------------------------------------------------------------------------------

def _position(text: str, offset: int) -> tuple:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _key_position(text: str, key: str, start: int = 0) -> tuple:
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, start)
    return _position(text, m.start() if m else start)


@dataclass
class Config:
    name: str
    raw: dict
    text: str
    experiments: list = field(default_factory=list)

    def settings(self, i: int) -> dict:
        """Top-level keys overlaid with experiment i's overrides."""
        base = {k: v for k, v in self.raw.items() if k != "experiments"}
        exp = self.experiments[i]
        merged = dict(base)
        for key, val in exp.items():
            if isinstance(val, dict) and isinstance(base.get(key), dict):
                merged[key] = {**base[key], **val}
            else:
                merged[key] = val
        return merged

    def where(self, key: str, index: Optional[int] = None) -> tuple:
        start = 0
        if index is not None:
            m = re.compile(r'"experiments"\s*:').search(self.text)
            start = m.end() if m else 0
            for _ in range(index + 1):
                nxt = re.compile(r'"kind"\s*:').search(self.text, start)
                if not nxt:
                    break
                start = nxt.end()
            start = max(0, self.text.rfind("{", 0, start))
        return _key_position(self.text, key, start)


def load_config(path_or_text) -> Config:
    p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("{") else None
    text = p.read_text() if p is not None else str(path_or_text)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise E.ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(raw, dict):
        raise E.ConfigError("config must be a JSON object", 1, 1)
    exps = raw.get("experiments", [])
    if not isinstance(exps, list):
        raise E.ConfigError("'experiments' must be a list", *_key_position(text, "experiments"))
    cfg = Config(str(raw.get("name", p.stem if p else "config")), raw, text, exps)
    for i, exp in enumerate(exps):
        if not isinstance(exp, dict) or exp.get("kind") not in RUNNERS:
            kind = exp.get("kind") if isinstance(exp, dict) else None
            raise E.ConfigError(f"experiment {i}: unknown kind {kind!r}; known: {sorted(RUNNERS)}",
                                *cfg.where("kind", i))
        s = cfg.settings(i)
        if "surface" in s:
            try:
                surface_from_json(s["surface"])
            except (E.RestrictLabError, KeyError, TypeError, ValueError) as exc:
                key_idx = i if "surface" in exp else None
                raise E.ConfigError(f"experiment {i}: malformed surface spec: {exc}",
                                    *cfg.where("surface", key_idx)) from None
        for key in ("S1", "S2"):
            boxes = s.get("boxes", {})
            if key in boxes:
                try:
                    b = Box.from_json(boxes[key])
                    if b.is_empty():
                        raise ValueError("empty box")
                except (E.RestrictLabError, TypeError, ValueError, IndexError) as exc:
                    raise E.ConfigError(f"experiment {i}: malformed box {key}: {exc}",
                                        *cfg.where(key, i if "boxes" in exp else None)) from None
    return cfg


# -- experiment runners --------------------------------------------------------------------
# Each runner takes the merged settings and returns (passed, report_json, sweeps).

def _surface(s):
    return surface_from_json(s["surface"])


def _boxes(s):
    b = s.get("boxes", {})
    return Box.from_json(b["S1"]), Box.from_json(b["S2"])


def _geometric(sw: dict, default: list) -> list:
    if "values" in sw:
        return [float(v) for v in sw["values"]]
    if "start" in sw:
        return [float(sw["start"]) * float(sw.get("ratio", 2)) ** i for i in range(int(sw.get("count", 4)))]
    return default


def run_conditions(s):
    S = _surface(s)
    S1, S2 = _boxes(s)
    g = s.get("grid", {})
    c = float(s.get("gates", {}).get("c", 1e-6))
    reps = all_conditions(S, S1, S2, int(g.get("conditions", 5)), c)
    need = s.get("require", ["C12", "C13"])
    by = {r.condition: r for r in reps}
    passed = all(by[n].passed for n in need if n in by) and all(n in by for n in need)
    return passed, {"reports": [r.to_json() for r in reps], "required": need}, []


def run_knapp(s):
    S = _surface(s)
    S1, S2 = _boxes(s)
    sw = s.get("sweep", {})
    rep = knapp_sweep(S, S1, S2, _geometric(sw.get("delta", {}), [2.0 ** -e for e in range(3, 7)]),
                      c=float(s.get("c", 0.125)), n=int(s.get("grid", {}).get("n", 32)),
                      tol=float(s.get("gates", {}).get("exponent_tol", 0.15)))
    return rep.passed, rep.to_json(), [rep]


def run_necessary(s):
    S = _surface(s)
    S1, S2 = _boxes(s)
    sw = s.get("sweep", {})
    rep = necessary_exponent_sweep(S, S1, S2, float(s["q"]), float(s["p"]),
                                   _geometric(sw.get("delta", {}), [2.0 ** -e for e in range(3, 7)]),
                                   tol=float(s.get("gates", {}).get("exponent_tol", 0.15)))
    return rep.passed, rep.to_json(), [rep]


def run_stationary(s):
    S = _surface(s)
    sw = s.get("sweep", {})
    rep = stationary_box_lower(S, s["nu1"], s["nu2"], float(s["q"]),
                               _geometric(sw.get("R", {}), [2.0 ** e for e in range(7, 11)]),
                               r=float(s.get("r", 0.1)), seed=int(s.get("seed", 0)),
                               tol=float(s.get("gates", {}).get("exponent_tol", 0.15)))
    return rep.passed, rep.to_json(), [rep]


def run_growth(s):
    S = _surface(s)
    S1, S2 = _boxes(s)
    sw, gates = s.get("sweep", {}), s.get("gates", {})
    rep = bilinear_growth_sweep(S, S1, S2, float(s["q"]), _geometric(sw.get("R", {}), [2.0 ** e for e in range(4, 9)]),
                                data=s.get("data", "random"), seed=int(s.get("seed", 0)),
                                upper_gate=float(gates.get("alpha_max", 0.2)),
                                lower_gate=float(gates.get("alpha_min", 0.05)))
    return rep.passed, rep.to_json(), [rep]


def run_wavepackets(s):
    from .extension import GridFunction, extend
    from .wavepackets import decompose, orthogonality_check, reconstruct, reconstruction_tolerance
    S = _surface(s)
    S1, _ = _boxes(s)
    R = float(s.get("R", 64))
    n = int(s.get("grid", {}).get("n", 128))
    rng = np.random.default_rng(int(s.get("seed", 0)))
    f = GridFunction(S1, rng.standard_normal((n,) * S.d) + 1j * rng.standard_normal((n,) * S.d))
    D = decompose(S, f, R)
    pts = np.concatenate([rng.uniform(-R / 2, R / 2, (50, S.d)), rng.uniform(-R, R, (50, S.k))], axis=1)
    exact = extend(S, f, pts)
    err = float(np.max(np.abs(reconstruct(D.packets(), pts, D) - exact)))
    tol = reconstruction_tolerance(D, exact)
    ratio_l2 = D.coefficient_l2() / f.norm()
    ps = D.packets()
    ratios = []
    for _ in range(int(s.get("orthogonality_trials", 5))):
        seen, W = set(), []
        for i in rng.permutation(len(ps)):
            if ps[i].index[0] not in seen:
                seen.add(ps[i].index[0])
                W.append(ps[i])
            if len(W) == 12:
                break
        ratios.append(orthogonality_check(D, W, rng.uniform(-R, R, S.k))["ratio"])
    passed = err <= tol and ratio_l2 <= 4 and all(1 / 8 <= r <= 8 for r in ratios)
    return passed, {"R": R, "n": n, "packets": D.n_packets, "reconstruction_error": err,
                    "reconstruction_tolerance": tol, "coefficient_l2_ratio": ratio_l2,
                    "orthogonality_ratios": ratios, "pruned_l1": D.pruned_l1}, []


def run_incidence(s):
    from .extension import GridFunction
    from .incidence import CubeGrid, build_incidence, counting_bounds
    from .wavepackets import decompose
    S = _surface(s)
    S1, S2 = _boxes(s)
    R = float(s.get("R", 16))
    delta = float(s.get("delta", 0.25))
    n = int(s.get("grid", {}).get("n", 64))
    rng = np.random.default_rng(int(s.get("seed", 0)))
    fams = []
    for box in (S1, S2):
        f = GridFunction(box, rng.standard_normal((n,) * S.d))
        ps = decompose(S, f, R).packets()
        keep = sorted(range(len(ps)), key=lambda i: -abs(ps[i].c))[: int(s.get("packets", 40))]
        fams.append([ps[i] for i in sorted(keep)])
    grid = CubeGrid.q_scale(R, S.d + S.k, delta)
    table = build_incidence(S, fams[0], fams[1], grid, delta)
    bgrid = CubeGrid.b_scale(R, S.d + S.k, delta)
    cnt = counting_bounds(table, bgrid)
    dc = table.double_counting()
    exact = all(a == b for a, b in dc.values())
    return bool(exact and cnt.passed), {"summary": table.summary(), "counting": cnt.to_json()}, []


def run_whitney(s):
    from .incidence import whitney_checks, whitney_csv_rows, whitney_pairs
    j, m = int(s.get("levels", 6)), int(s.get("dim", 2))
    pairs = whitney_pairs(j, m)
    chk = whitney_checks(pairs, m)
    header = ["level"] + [f"i{a}" for a in range(m)] + [f"k{a}" for a in range(m)] + ["dist_over_side"]
    return chk["passed"], {"levels": j, "dim": m, "counts": {str(k): len(v) for k, v in pairs.items()},
                           "checks": chk}, [("", header, whitney_csv_rows(pairs))]


def run_geometry(s):
    from .geometry import Tube, gamma_transversality_witness, tube_intersection_diameter
    S = _surface(s)
    nu1, nu2 = np.asarray(s["nu1"], float), np.asarray(s["nu2"], float)
    out, ok = {}, True
    for R in s.get("R", [1e2, 1e4]):
        rep = tube_intersection_diameter(Tube(S, nu1, float(R)), Tube(S, nu2, float(R)))
        out[f"intersection_R{R:g}"] = rep.to_json()
        ok &= rep.passed
    if "nu2p" in s:
        w = gamma_transversality_witness(S, nu1, np.asarray(s["nu2p"], float), nu2, float(s.get("gamma_R", 1e4)),
                                         float(s.get("delta", 0.0)))
        out["gamma"] = w.to_json()
        if s.get("expect_null", False):
            ok &= bool(w.min_abs_det <= 1e-9)
        else:
            ok &= bool(w.det_passed)
    return bool(ok), out, []


def run_complex_demo(s):
    out = complex_failure_demo(2, s.get("D"))
    ok = bool(out["min_abs_det"] <= 1e-9 and out["cases"][0]["value"] <= 1e-12)
    rows = [(c["label"], c["separation"], c["value"]) for c in out["cases"]]
    return ok, _jsonable(out), [("", ["case", "separation", "value"], rows)]


def run_whitney_bilinear(s):
    rep = whitney_bilinear_pipeline(s.get("D", [[1, 0], [0, 1]]), q=float(s.get("q", 4)), p=float(s.get("p", 4)),
                                    j_max=int(s.get("j_max", 4)), n_points=int(s.get("points", 1024)),
                                    tol=float(s.get("gates", {}).get("exponent_tol", 0.2)),
                                    seed=int(s.get("seed", 0)))
    r0 = rep.ratios[0] if rep.ratios else float("nan")
    rows = [(j, r, r0 * 2.0 ** (rep.predicted_slope * (j - rep.levels[0])), float("nan"))
            for j, r in zip(rep.levels, rep.ratios)]
    return rep.passed, rep.to_json(), [("", ["param", "norm", "lower", "upper"], rows)]


def run_thresholds(s):
    d, k = int(s.get("d", 2)), int(s.get("k", 1))
    qb, ql, qp = bilinear_threshold(d, k), linear_threshold(d, k), product_threshold(int(s.get("n", 2)))
    ok = qp == 2 * bilinear_threshold(2 * int(s.get("n", 2)), 2)
    if "expect_bilinear" in s:
        ok &= str(qb) == str(s["expect_bilinear"])
    if "expect_product" in s:
        ok &= str(qp) == str(s["expect_product"])
    return bool(ok), {"bilinear": str(qb), "linear": str(ql), "product": str(qp)}, []


def run_plancherel(s):
    from .extension import GridFunction, slice_l2_norms
    S = _surface(s)
    S1, _ = _boxes(s)
    rng = np.random.default_rng(int(s.get("seed", 0)))
    n = int(s.get("grid", {}).get("n", 32))
    worst = 0.0
    for _ in range(int(s.get("functions", 5))):
        f = GridFunction(S1, rng.standard_normal((n,) * S.d) + 1j * rng.standard_normal((n,) * S.d))
        ts = rng.uniform(-50, 50, (int(s.get("times", 5)), S.k))
        worst = max(worst, float(np.max(slice_l2_norms(S, f, ts)) / f.norm()))
    return bool(worst <= 1 + 1e-6), {"max_ratio": worst}, []


RUNNERS: dict = {
    "conditions": run_conditions, "knapp": run_knapp, "necessary": run_necessary,
    "stationary": run_stationary, "bilinear-growth": run_growth, "wavepackets": run_wavepackets,
    "incidence": run_incidence, "whitney": run_whitney, "geometry": run_geometry,
    "complex-demo": run_complex_demo, "whitney-bilinear": run_whitney_bilinear,
    "thresholds": run_thresholds, "plancherel": run_plancherel,
}


# -- outputs --------------------------------------------------------------------------------

def gnuplot_script(csv_name: str, rep: SweepReport) -> str:
    return "\n".join([
        "set datafile separator ','",
        "set logscale xy",
        f"set xlabel '{rep.param}'",
        "set ylabel 'norm'",
        f"set title '{rep.name}: slope {rep.fit_exponent:.3f} (predicted {rep.predicted_exponent:.3f})'",
        f"plot '{csv_name}' using 1:2 skip 1 with linespoints title 'measured', \\",
        f"     exp({rep.intercept!r}) * x**({rep.fit_exponent!r}) title 'fit'",
        "",
    ])


def write_sweep(out_dir: Path, stem: str, rep: SweepReport, plots: bool) -> list:
    csv_path = out_dir / f"{stem}.csv"
    write_csv(csv_path, ["param", "norm", "lower", "upper"], rep.rows())
    files = [csv_path.name]
    if plots:
        gp = out_dir / f"{stem}.gp"
        gp.write_text(gnuplot_script(csv_path.name, rep))
        files.append(gp.name)
    return files


def write_artifacts(out_dir: Path, name: str, items: list, plots: bool) -> list:
    """SweepReports become CSV (+ .gp); (suffix, header, rows) tuples become plain CSV."""
    files = []
    for j, item in enumerate(items):
        if isinstance(item, SweepReport):
            files += write_sweep(out_dir, name if j == 0 else f"{name}-{j}", item, plots)
        else:
            suffix, header, rows = item
            path = out_dir / f"{name}{suffix}.csv"
            write_csv(path, header, rows)
            files.append(path.name)
    return files


def run_config(path, out_dir=None, plots: Optional[bool] = None, log: Callable = print) -> int:
    try:
        cfg = load_config(path)
    except E.ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        log(f"cannot read config: {exc}")
        return EXIT_CONFIG
    out = Path(out_dir) if out_dir is not None else Path(f"{cfg.name}-out")
    out.mkdir(parents=True, exist_ok=True)
    plots = bool(cfg.raw.get("plots", False)) if plots is None else plots
    entries, code = [], EXIT_OK
    for i, exp in enumerate(cfg.experiments):
        s = cfg.settings(i)
        name = str(exp.get("name", f"{i:02d}-{exp['kind']}"))
        t0 = time.perf_counter()
        entry = {"name": name, "kind": exp["kind"]}
        try:
            passed, rep, sweeps = RUNNERS[exp["kind"]](s)
            entry.update(status="pass" if passed else "gate-failure", passed=bool(passed), report=_jsonable(rep))
            entry["artifacts"] = write_artifacts(out, name, sweeps, plots)
            if not passed:
                code = max(code, EXIT_GATE)
        except E.SearchFailed as exc:
            entry.update(status="search-failed", passed=None, error=str(exc))
        except REFUSALS as exc:
            rep = getattr(exc, "report", None)
            entry.update(status="refused", passed=False, error=f"{type(exc).__name__}: {exc}",
                         report=rep.to_json() if rep is not None else None)
            code = max(code, EXIT_GATE)
        except NUMERICAL as exc:
            entry.update(status="numerical-failure", passed=False, error=f"{type(exc).__name__}: {exc}")
            code = max(code, EXIT_NUMERICAL)
        except (KeyError, TypeError, ValueError) as exc:
            line, col = cfg.where("kind", i)
            log(f"config error: experiment {i} ({name}): {type(exc).__name__}: {exc} (line {line}, column {col})")
            return EXIT_CONFIG
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        log(f"[{entry['status']}] {name} ({entry['seconds']:.1f} s)")
        entries.append(entry)
    manifest = {"schema": REPORT_SCHEMA, "config": cfg.name, "seed": cfg.raw.get("seed", 0),
                "exit_code": code, "experiments": entries}
    (out / "report.json").write_text(json.dumps(_jsonable(manifest), indent=2))
    return code
