"""Command-line interface: ``restrictlab <subcommand> ...`` (or ``python -m restrictlab``)."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import errors as E
from .config import EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL, EXIT_OK, NUMERICAL, REFUSALS, run_config, write_sweep
from .experiments import _jsonable
from .surfaces import Box, named_surface, surface_from_json


def _json_arg(text: str):
    p = Path(text)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _surface(text: str):
    """A JSON file, inline JSON, or a registered name such as ``paraboloid``."""
    try:
        obj = _json_arg(text)
    except (json.JSONDecodeError, OSError):
        name, _, rest = text.partition(":")
        params = {k: int(v) for k, v in (kv.split("=") for kv in rest.split(",") if kv)}
        return named_surface(name, **params)
    return surface_from_json(obj)


def _box(text: str) -> Box:
    return Box.from_json(_json_arg(text))


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _emit(obj, out=None) -> None:
    text = json.dumps(_jsonable(obj), indent=2)
    if out:
        Path(out).write_text(text)
    else:
        print(text)


# -- subcommands ----------------------------------------------------------------------------

def cmd_check_conditions(a) -> int:
    from .conditions import check_c12, check_c13, check_c14, check_c15
    S = _surface(a.surface)
    checks = {"C12": check_c12, "C13": check_c13, "C14": check_c14, "C15": check_c15}
    reps = [checks[c](S, _box(a.box1), _box(a.box2), a.grid, a.threshold) for c in a.conditions.split(",")]
    _emit([r.to_json() for r in reps] if len(reps) > 1 else reps[0].to_json(), a.out)
    return EXIT_OK if all(r.passed for r in reps) else EXIT_GATE


def cmd_extend(a) -> int:
    from .extension import SpaceTimeGrid, extend_grid
    from .fieldio import field_summary_rows, load_grid_function, write_csv, write_field
    S = _surface(a.surface)
    f = load_grid_function(a.input)
    q = _floats(a.Q)
    if len(q) != S.d + S.k + 1:
        raise E.BadShape(f"--Q needs {S.d + S.k} centre coordinates and a side")
    G = SpaceTimeGrid.for_surface(S, f.box, q[-1], center=q[:-1], spacing_x=a.spacing_x)
    field = extend_grid(S, f, G)
    write_field(a.out, field, G.h, G.center)
    if a.csv:
        header = [f"t{j + 1}" for j in range(S.k)] + ["l2_x", "max_abs"]
        from .fieldio import read_field
        write_csv(a.csv, header, field_summary_rows(read_field(a.out), S.d))
    print(json.dumps({"out": a.out, "shape": list(G.shape), "spacing": G.h.tolist()}))
    return EXIT_OK


def cmd_decompose(a) -> int:
    from .fieldio import load_grid_function
    from .wavepackets import decompose
    S = _surface(a.surface)
    D = decompose(S, load_grid_function(a.input), a.R)
    D.dump_jsonl(a.out)
    print(json.dumps({"packets": D.n_packets, "L": D.L, "coefficient_l2": D.coefficient_l2(),
                      "pruned_l1": D.pruned_l1, "out": a.out}))
    return EXIT_OK


def _read_packets(path, R):
    from .incidence import TubeSpec
    rows = [json.loads(s) for s in Path(path).read_text().splitlines() if s.strip()]
    return [TubeSpec(np.asarray(r["l"], float), np.asarray(r["nu"], float), R) for r in rows]


def cmd_incidence(a) -> int:
    from .incidence import CubeGrid, build_incidence, counting_bounds
    S = _surface(a.surface)
    p1 = _read_packets(a.packets, a.R)
    p2 = _read_packets(a.packets2, a.R) if a.packets2 else []
    grid = CubeGrid.q_scale(a.R, S.d + S.k, a.delta)
    table = build_incidence(S, p1, p2, grid, a.delta)
    out = {"summary": table.summary()}
    if a.delta > 0:
        cnt = counting_bounds(table, CubeGrid.b_scale(a.R, S.d + S.k, a.delta))
        out["counting"] = cnt.to_json()
    _emit(out, a.out)
    ok = out["summary"]["double_counting_exact"] and out.get("counting", {}).get("passed", True)
    return EXIT_OK if ok else EXIT_GATE


def cmd_whitney(a) -> int:
    from .fieldio import write_csv
    from .incidence import whitney_checks, whitney_csv_rows, whitney_pairs
    pairs = whitney_pairs(a.levels, a.dim)
    header = ["level"] + [f"i{j}" for j in range(a.dim)] + [f"k{j}" for j in range(a.dim)] + ["dist_over_side"]
    rows = whitney_csv_rows(pairs)
    if a.out:
        write_csv(a.out, header, rows)
    else:
        import csv
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK if whitney_checks(pairs, a.dim)["passed"] else EXIT_GATE


def _write_report(rep, a) -> int:
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_sweep(out, rep.name, rep, a.plot)
    (out / "report.json").write_text(json.dumps({"schema": "restrictlab.report/1", "experiments": [
        {"name": rep.name, "passed": bool(rep.passed), "report": rep.to_json(), "artifacts": files}]}, indent=2))
    print(f"{rep.name}: slope {rep.fit_exponent:.4f} +- {rep.stderr:.4f} "
          f"(predicted {rep.predicted_exponent:.4f}) {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_GATE


def cmd_sweep_knapp(a) -> int:
    from .experiments import knapp_sweep, necessary_exponent_sweep
    S = _surface(a.surface)
    B1, B2 = _box(a.box1), _box(a.box2)
    deltas = _floats(a.deltas)
    if a.p is not None and a.q is not None:
        rep = necessary_exponent_sweep(S, B1, B2, a.q, a.p, deltas)
    else:
        rep = knapp_sweep(S, B1, B2, deltas, c=a.c, n=a.n)
    return _write_report(rep, a)


def cmd_sweep_bilinear(a) -> int:
    from .experiments import bilinear_growth_sweep
    S = _surface(a.surface)
    rep = bilinear_growth_sweep(S, _box(a.box1), _box(a.box2), a.q, _floats(a.R), data=a.data, seed=a.seed)
    return _write_report(rep, a)


def cmd_demo_complex(a) -> int:
    from .experiments import complex_failure_demo
    out = complex_failure_demo(2, _json_arg(a.D) if a.D else None)
    _emit(out, a.out)
    return EXIT_OK if out["min_abs_det"] <= 1e-9 else EXIT_GATE


def cmd_geometry(a) -> int:
    from .geometry import Tube, gamma_transversality_witness, tube_intersection_diameter
    S = _surface(a.surface)
    nu1, nu2 = np.asarray(_floats(a.nu1)), np.asarray(_floats(a.nu2))
    if a.lemma == "intersection":
        rep = tube_intersection_diameter(Tube(S, nu1, a.R, delta=a.delta), Tube(S, nu2, a.R, delta=a.delta))
    else:
        nu2p = np.asarray(_floats(a.nu2p)) if a.nu2p else nu2
        rep = gamma_transversality_witness(S, nu1, nu2p, nu2, a.R, a.delta)
    _emit(rep.to_json(), a.out)
    return EXIT_OK if rep.passed else EXIT_GATE


def cmd_run(a) -> int:
    return run_config(a.config, a.out_dir, True if a.plot else None)


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="restrictlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-conditions", help="scan the curvature/transversality conditions on two boxes")
    c.add_argument("--surface", required=True)
    c.add_argument("--box1", required=True, help="JSON [[lo...], [hi...]]")
    c.add_argument("--box2", required=True)
    c.add_argument("--grid", type=int, default=5)
    c.add_argument("--threshold", type=float, default=1e-6)
    c.add_argument("--conditions", default="C13", help="comma list from C12,C13,C14,C15")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_check_conditions)

    c = sub.add_parser("extend", help="evaluate Ef on a space-time cube and dump the field")
    c.add_argument("--surface", required=True)
    c.add_argument("--input", required=True, help="data JSON {box, n, values | kind}")
    c.add_argument("--Q", required=True, help="centre coordinates then side, comma separated")
    c.add_argument("--out", required=True)
    c.add_argument("--csv", help="per-slice summary CSV")
    c.add_argument("--spacing-x", type=float, default=0.25)
    c.set_defaults(fn=cmd_extend)

    c = sub.add_parser("decompose", help="wave packet decomposition to JSONL")
    c.add_argument("--surface", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--R", type=float, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_decompose)

    c = sub.add_parser("incidence", help="tube/cube incidence table from packet JSONL files")
    c.add_argument("--surface", required=True)
    c.add_argument("--packets", required=True)
    c.add_argument("--packets2")
    c.add_argument("--R", type=float, required=True)
    c.add_argument("--delta", type=float, default=0.0)
    c.add_argument("--out")
    c.set_defaults(fn=cmd_incidence)

    c = sub.add_parser("whitney", help="Whitney pairs of dyadic cubes as CSV")
    c.add_argument("--levels", type=int, required=True)
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--out")
    c.set_defaults(fn=cmd_whitney)

    c = sub.add_parser("sweep-knapp", help="Knapp dual-box exponent sweep (or the two-sided sweep with --p/--q)")
    c.add_argument("--surface", required=True)
    c.add_argument("--box1", required=True)
    c.add_argument("--box2", required=True)
    c.add_argument("--deltas", default="0.125,0.0625,0.03125,0.015625")
    c.add_argument("--c", type=float, default=0.125)
    c.add_argument("--n", type=int, default=32)
    c.add_argument("--p", type=float)
    c.add_argument("--q", type=float)
    c.add_argument("--out-dir", default="sweep-knapp-out")
    c.add_argument("--plot", action="store_true")
    c.set_defaults(fn=cmd_sweep_knapp)

    c = sub.add_parser("sweep-bilinear", help="bilinear growth exponent over Q_R")
    c.add_argument("--surface", required=True)
    c.add_argument("--box1", required=True)
    c.add_argument("--box2", required=True)
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--R", default="16,32,64,128")
    c.add_argument("--data", choices=["random", "knapp"], default="random")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir", default="sweep-bilinear-out")
    c.add_argument("--plot", action="store_true")
    c.set_defaults(fn=cmd_sweep_bilinear)

    c = sub.add_parser("demo-complex", help="separated pairs where the complex condition vanishes")
    c.add_argument("--D", help="2x2 JSON matrix for an extra isotropic example")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_demo_complex)

    c = sub.add_parser("geometry", help="plate intersection or Gamma transversality witness")
    c.add_argument("--lemma", choices=["intersection", "transversality"], required=True)
    c.add_argument("--surface", required=True)
    c.add_argument("--R", type=float, required=True)
    c.add_argument("--delta", type=float, default=0.0)
    c.add_argument("--nu1", required=True)
    c.add_argument("--nu2", required=True)
    c.add_argument("--nu2p")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_geometry)

    c = sub.add_parser("run", help="run a config file of experiments")
    c.add_argument("config")
    c.add_argument("--out-dir")
    c.add_argument("--plot", action="store_true")
    c.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return a.fn(a)
    except (E.ConfigError, json.JSONDecodeError, E.BadShape, E.UnknownName, E.NonSymmetric, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except REFUSALS as exc:
        print(f"refused: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE
    except NUMERICAL as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except E.SearchFailed as exc:
        print(f"search failed: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
