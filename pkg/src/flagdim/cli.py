"""Command-line entry point.

Every command writes ``<command>.json`` (plus CSV tables where they exist)
into ``--out``. Wall-clock data goes to ``<command>.meta.json`` only, so the
main outputs are byte-identical for identical arguments. All randomness is
derived from ``--seed`` via ``rng_for(seed, replica, ...)``.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DegeneracyError, FlagdimError, InconsistencyError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p, measure=True, seed=True):
    if measure:
        p.add_argument("--measure", required=True,
                       help="measure spec JSON, or the name of a shipped example")
    if seed:
        p.add_argument("--seed", type=int, required=True, help="root seed (mandatory)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--print-config", action="store_true", help="print the resolved run config and exit")


def _add_spectrum_opts(p, horizon=1000, replicas=16):
    p.add_argument("--horizon", type=_positive_int, default=horizon)
    p.add_argument("--replicas", type=_positive_int, default=replicas)
    p.add_argument("--cluster-tol", type=_positive_float, default=None)


def _add_ensemble_opts(p, count=2000, horizon=400):
    p.add_argument("--count", type=_positive_int, default=count, help="ensemble size")
    p.add_argument("--flag-horizon", type=_positive_int, default=horizon, help="word length per flag")
    p.add_argument("--k", type=_positive_int, default=4, help="neighbors for k-NN estimators")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flagdim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("lyapunov", help="Lyapunov spectrum by QR-renormalized products")
    _add_common(p)
    _add_spectrum_opts(p)

    p = sub.add_parser("oseledets", help="sample Oseledets splittings at time 0")
    _add_common(p)
    _add_spectrum_opts(p)
    p.add_argument("--count", type=_positive_int, default=100)
    p.add_argument("--flag-horizon", type=_positive_int, default=400)

    p = sub.add_parser("topologies", help="enumerate admissible topologies")
    _add_common(p, measure=False, seed=False)
    p.add_argument("--N", type=_positive_int, required=True)

    p = sub.add_parser("path", help="monotone refinement path between two topologies")
    _add_common(p, measure=False, seed=False)
    p.add_argument("--exponents", type=_floats, required=True, help="chi_1,...,chi_N (descending)")
    p.add_argument("--from", dest="finer", default=None, help="finer topology (default T_1)")
    p.add_argument("--to", dest="coarser", default=None, help="coarser topology (default T_0)")

    p = sub.add_parser("coords-verify", help="change-of-coordinates fixtures and oracle equivalence")
    _add_common(p, measure=False)
    p.add_argument("--N", type=_positive_int, default=4)
    p.add_argument("--trials", type=_positive_int, default=500)
    p.add_argument("--tol", type=_positive_float, default=1e-8)

    p = sub.add_parser("entropy", help="Furstenberg, fiber and random-walk entropies")
    _add_common(p)
    _add_spectrum_opts(p)
    _add_ensemble_opts(p)
    p.add_argument("--filtration", default=None, help="inner prefix lengths, e.g. 1,2 (default: full flag)")
    p.add_argument("--rw-max-n", type=_positive_int, default=10)

    p = sub.add_parser("dimension", help="path dimension and direct ball-counting dimension")
    _add_common(p)
    _add_spectrum_opts(p)
    _add_ensemble_opts(p)
    p.add_argument("--filtration", default=None)
    p.add_argument("--probes", type=_positive_int, default=500)
    p.add_argument("--radii", type=_floats, default=None, help="explicit radius ladder")

    p = sub.add_parser("lydim", help="Lyapunov dimension profile")
    _add_common(p, measure=False, seed=False)
    p.add_argument("--exponents", type=_floats, required=True)
    p.add_argument("--mults", type=_ints, default=None)
    p.add_argument("--filtration", default=None)
    p.add_argument("--kappa", type=float, required=True)

    p = sub.add_parser("report", help="full verification report")
    _add_common(p)
    _add_spectrum_opts(p)
    _add_ensemble_opts(p)
    p.add_argument("--filtration", default=None)
    p.add_argument("--probes", type=_positive_int, default=500)
    p.add_argument("--no-cylinder", action="store_true")
    return parser


def _config(args) -> dict:
    # the output directory does not affect results and stays out of the hashed config
    cfg = {k: v for k, v in vars(args).items() if k not in ("print_config", "out")}
    return {k: cfg[k] for k in sorted(cfg)}


def _load(args):
    from .randwalk import read_measure, shipped_measure, shipped_measures

    path = Path(args.measure)
    if not path.exists() and args.measure in shipped_measures():
        return shipped_measure(args.measure)
    return read_measure(path)


def _spectrum(m, args):
    from .spectrum import lyapunov_spectrum

    return lyapunov_spectrum(m, args.horizon, args.replicas, args.cluster_tol, args.seed)


def _filtration(args, N):
    from .topology import parse_filtration

    text = args.filtration
    if text is None:
        text = ",".join(str(i) for i in range(1, N))
    return parse_filtration(text, N)


def _clean(obj):
    """Plain JSON types with floats rounded-trip exactly (repr)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, doc):
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# --- commands: each returns (document, {csv name: (header, rows)}, summary lines)

def cmd_lyapunov(args):
    m = _load(args)
    spec = _spectrum(m, args)
    doc = {"measure": m.name, "spectrum": spec.to_dict(), "mass_deficit": m.mass_deficit}
    lines = [f"chi = {', '.join(f'{c:.6f}' for c in spec.chis)}  mults = {list(spec.mults)}",
             f"raw = {', '.join(f'{c:.6f}' for c in spec.raw)}"]
    return doc, {"lyapunov": (("replica", "k", "exponent"), spec.csv_rows())}, lines


def cmd_oseledets(args):
    from .estimate import sample_flag_ensemble
    from .linalg import Subspace, min_principal_angle

    m = _load(args)
    spec = _spectrum(m, args)
    ens = sample_flag_ensemble(m, spec, max(args.count, 2), args.flag_horizon, args.seed)
    rows = []
    samples = []
    for s in range(len(ens)):
        parts = [p[s] for p in ens.parts]
        samples.append({"replica": int(ens.replicas[s]), "blocks": [b.tolist() for b in parts]})
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                rows.append((s, i + 1, j + 1, min_principal_angle(Subspace(parts[i]), Subspace(parts[j]))))
    angles = np.array([r[3] for r in rows]) if rows else np.zeros(0)
    doc = {
        "measure": m.name,
        "spectrum": spec.to_dict(),
        "count": len(ens),
        "dropouts": ens.dropouts,
        "min_angle": float(angles.min()) if angles.size else None,
        "samples": samples,
    }
    lines = [f"{len(ens)} splittings, dims {list(spec.mults)}, {ens.dropouts} dropped",
             f"smallest angle between blocks: {doc['min_angle']}"]
    return doc, {"oseledets_angles": (("sample", "i", "j", "min_angle"), rows)}, lines


def cmd_topologies(args):
    from .topology import enumerate_admissible

    tops = enumerate_admissible(args.N)
    doc = {"N": args.N, "count": len(tops), "topologies": [t.render() for t in tops]}
    return doc, {}, [f"N={args.N}: {len(tops)} admissible topologies"]


def cmd_path(args):
    from .spectrum import spectrum_from_exponents
    from .topology import chi_step, extremes, monotone_path, parse_topology

    chis = args.exponents
    if any(a <= b for a, b in zip(chis, chis[1:])):
        raise ValidationError("exponents must be strictly decreasing")
    N = len(chis)
    spec = spectrum_from_exponents(chis, mults=[1] * N)
    t1, t0 = extremes(N)
    t = parse_topology(args.finer) if args.finer else t1
    u = parse_topology(args.coarser) if args.coarser else t0
    path = monotone_path(t, u, spec)
    steps = [{"step": s.render(), "finer": s.finer.render(), "coarser": s.coarser.render(),
              "chi": chi_step(s, spec)} for s in path]
    doc = {"from": t.render(), "to": u.render(), "exponents": chis, "steps": steps}
    lines = [f"{len(steps)} steps from {t.render()} to {u.render()}"] + [
        f"  {s['step']}  chi = {s['chi']:.6g}" for s in steps
    ]
    return doc, {}, lines


def cmd_coords_verify(args):
    from .coords import four_index_fixture, oracle_equivalence, three_index_fixture

    X, _ = four_index_fixture(2, 3, 5, 7)
    got4 = [X[1, 0], X[3, 0], X[3, 1], X[3, 2]]
    want4 = [1, 15, 11, 6]
    err4 = float(np.max(np.abs(np.subtract(got4, want4))))
    got3 = three_index_fixture(4, 9, 1, 5, 2)
    err3 = float(np.max(np.abs(np.subtract(got3, (3, 7)))))
    rows = oracle_equivalence(args.N, args.trials, args.seed)
    table = [{"t": r.t.render(), "u": r.u.render(), "dims": list(r.dims), "trials": r.trials,
              "max_error": r.max_error, "max_condition": r.max_condition, "pass": r.passed(args.tol)}
             for r in rows]
    all_ok = err4 <= 1e-10 and err3 <= 1e-10 and all(r["pass"] for r in table)
    doc = {
        "fixtures": [
            {"name": "four-index", "expected": want4, "got": got4, "max_error": err4, "pass": err4 <= 1e-10},
            {"name": "three-index", "expected": [3, 7], "got": list(got3), "max_error": err3, "pass": err3 <= 1e-10},
        ],
        "oracle": table,
        "pass": all_ok,
    }
    worst = max((r["max_error"] for r in table), default=0.0)
    lines = [
        f"four-index fixture: {'PASS' if err4 <= 1e-10 else 'FAIL'} (err {err4:.2e})",
        f"three-index fixture: {'PASS' if err3 <= 1e-10 else 'FAIL'} (err {err3:.2e})",
        f"oracle: {sum(r['pass'] for r in table)}/{len(table)} pairs pass, worst error {worst:.2e}",
    ]
    csv_rows = [(r["t"], r["u"], " ".join(map(str, r["dims"])), r["max_error"], int(r["pass"])) for r in table]
    return doc, {"coords_oracle": (("t", "u", "dims", "max_error", "pass"), csv_rows)}, lines


def cmd_entropy(args):
    from .estimate import cylinder_entropy, fiber_entropy, furstenberg_entropy, rw_entropy, sample_flag_ensemble
    from .topology import extremes, filtered_topology

    m = _load(args)
    spec = _spectrum(m, args)
    L = _filtration(args, spec.N)
    ens = sample_flag_ensemble(m, spec, args.count, args.flag_horizon, args.seed + 1)
    t = filtered_topology(L)
    _, t0 = extremes(spec.N)
    kf = furstenberg_entropy(m, L, ens, args.k)
    kt = fiber_entropy(m, t, t0, ens, args.k)
    ents = [{"quantity": "furstenberg", **kf.to_dict()}, {"quantity": "fiber T->T0", **kt.to_dict()}]
    if spec.N > 1:
        kc = cylinder_entropy(m, t, t0, ens, 1, args.seed)
        ents.append({"quantity": "cylinder T->T0", **kc.to_dict()})
    rw = rw_entropy(m, args.rw_max_n)
    doc = {"measure": m.name, "spectrum": spec.to_dict(), "filtration": L.render(),
           "entropies": ents, "rw_entropy": rw.to_dict()}
    lines = [f"{e['quantity']}: {e['value']:.6f} +- {e['stderr']:.6f} ({e['method']})" for e in ents]
    lines.append(f"h_RW <= {rw.value:.6f} (n = {rw.achieved_n}{', truncated' if rw.truncated else ''})")
    return doc, {"rw_entropy": (("n", "H_over_n"), rw.csv_rows())}, lines


def cmd_dimension(args):
    from .estimate import local_dimension, path_dimension, sample_flag_ensemble
    from .topology import extremes, filtered_topology, monotone_path

    m = _load(args)
    spec = _spectrum(m, args)
    L = _filtration(args, spec.N)
    ens = sample_flag_ensemble(m, spec, args.count, args.flag_horizon, args.seed + 1)
    _, t0 = extremes(spec.N)
    path = monotone_path(filtered_topology(L), t0, spec)
    delta = path_dimension(m, path, ens, args.k)
    direct = local_dimension(ens.flag_features(L), radii=args.radii, probes=args.probes, seed=args.seed)
    doc = {"measure": m.name, "spectrum": spec.to_dict(), "filtration": L.render(),
           "dimensions": [{"quantity": "path", **delta.to_dict()}, {"quantity": "direct", **direct.to_dict()}]}
    lines = [f"path dimension: {delta.value:.6f} +- {delta.stderr:.6f}",
             f"direct dimension: {direct.value:.6f} +- {direct.stderr:.6f}"]
    return doc, {"ball_mass": (("r", "mass"), direct.csv_rows())}, lines


def cmd_lydim(args):
    from .estimate import lyapunov_dimension
    from .spectrum import spectrum_from_exponents

    spec = spectrum_from_exponents(args.exponents, mults=args.mults or [1] * len(args.exponents))
    if spec.d != sum(spec.mults):
        raise ValidationError("mults must match the number of exponents")
    L = _filtration(args, spec.N)
    prof = lyapunov_dimension(spec, L, args.kappa)
    doc = {"exponents": list(spec.chis), "mults": list(spec.mults), "filtration": L.render(),
           "lyapunov_profile": prof.to_dict()}
    bp = prof.breakpoints
    rows = [(float(x), float(prof(x))) for x in bp]
    return doc, {"lydim_profile": (("t", "D"), rows)}, [f"dim_LY = {prof.dim_ly:.10g} of {prof.total_dimension}"]


def cmd_report(args):
    from .estimate import ReportParams, verify_report

    m = _load(args)
    params = ReportParams(seed=args.seed, spectrum_horizon=args.horizon, replicas=args.replicas,
                          cluster_tol=args.cluster_tol, horizon=args.flag_horizon, count=args.count,
                          k=args.k, probes=args.probes, cylinder=not args.no_cylinder)
    doc = verify_report(m, args.filtration, params)
    tables = doc.pop("csv")
    csvs = {name: (rows[0], rows[1:]) for name, rows in tables.items()}
    lines = [f"{q['name']}: {'holds' if q['holds'] else 'VIOLATED'} (margin {q['margin']:.4g})"
             for q in doc["inequalities"]]
    return doc, csvs, lines


COMMANDS = {
    "lyapunov": cmd_lyapunov,
    "oseledets": cmd_oseledets,
    "topologies": cmd_topologies,
    "path": cmd_path,
    "coords-verify": cmd_coords_verify,
    "entropy": cmd_entropy,
    "dimension": cmd_dimension,
    "lydim": cmd_lydim,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(_config(args), indent=2, sort_keys=True))
        return EXIT_OK
    start = time.perf_counter()
    try:
        doc, csvs, lines = COMMANDS[args.command](args)
    except (DegeneracyError, InconsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, FlagdimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.command.replace("-", "_")
    _write_json(out / f"{name}.json", {"command": args.command, "config": _config(args), "result": doc})
    written = [f"{name}.json"]
    for csv_name, (header, rows) in csvs.items():
        _write_csv(out / f"{csv_name}.csv", header, rows)
        written.append(f"{csv_name}.csv")
    _write_json(out / f"{name}.meta.json", {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "elapsed_s": time.perf_counter() - start,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "out": str(out),
    })
    for line in lines:
        print(line)
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
