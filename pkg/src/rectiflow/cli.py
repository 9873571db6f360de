"""Command-line experiment runner.

Exit codes: 0 when every checked bound holds, 1 when a bound is violated,
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_csv(path: Path, header, rows, reproducible: bool) -> None:
    with open(path, "w", newline="") as fh:
        if not reproducible:
            fh.write(f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, doc: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION} | doc
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def _positive(name: str, value) -> None:
    if value is None or value <= 0:
        raise UsageError(f"--{name} must be positive, got {value}")


# ------------------------------------------------------------------- spike


def cmd_spike(args) -> int:
    from .relu_net import evaluate, metrics
    from .spike import SpikeBounds, spike, spike_network

    _positive("m", args.m)
    _positive("N", args.N)
    rng = np.random.default_rng(args.seed)
    net = spike_network(args.m)
    x = rng.uniform(-2, 2, (args.probes, args.m))
    exact_dev = float(np.abs(evaluate(net, x)[:, 0] - spike(x)).max())
    # partition of unity through the network itself
    y = rng.random((args.probes, args.m)) * args.N
    base = np.floor(y)
    total = np.zeros(args.probes)
    for shift in np.ndindex(*([3] * args.m)):
        total += evaluate(net, y - (base + np.array(shift) - 1))[:, 0]
    pou_dev = float(np.abs(total - 1).max())
    met = metrics(net)
    b = SpikeBounds.for_dim(args.m)
    checks = {
        "depth": (met.depth, b.depth, met.depth <= b.depth),
        "connectivity": (met.connectivity, b.connectivity, met.connectivity <= b.connectivity),
        "width": (met.width, b.width, met.width <= b.width),
        "weights": (sorted(str(w) for w in met.weight_set), "{-1,0,1}", met.weight_set <= {-1, 0, 1}),
        "exactness": (exact_dev, 1e-12, exact_dev <= 1e-12),
        "partition_of_unity": (pou_dev, 1e-12, pou_dev <= 1e-12),
    }
    out = Path(args.out)
    _write_csv(out / "spike_metrics.csv", ["quantity", "value", "bound", "ok"],
               [[k, v[0], v[1], v[2]] for k, v in checks.items()], args.reproducible)
    ok = all(v[2] for v in checks.values())
    _write_json(out / "spike_report.json", {"command": "spike", "m": args.m, "N": args.N,
                                             "checks": {k: list(v) for k, v in checks.items()}, "ok": ok})
    for k, v in checks.items():
        print(f"{k}: {v[0]} (bound {v[1]}) {'ok' if v[2] else 'VIOLATED'}")
    return EXIT_OK if ok else EXIT_VIOLATION


# --------------------------------------------------------------- approx-fn


def cmd_approx_fn(args) -> int:
    from .lipschitz_approx import (
        LipschitzSample,
        PreconditionError,
        build_quantized_approximant,
        estimate_lipschitz,
    )
    from .relu_net import evaluate, metrics, save_network

    if not args.sample:
        raise UsageError("--sample is required")
    _positive("N", args.N)
    try:
        sample = LipschitzSample.read_csv(args.sample)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read sample: {e}") from None
    try:
        approx = build_quantized_approximant(sample, args.N)
    except PreconditionError as e:
        raise UsageError(str(e)) from None
    pred = evaluate(approx.net, sample.points)
    err = float(np.abs(pred - sample.values).max())
    lip = estimate_lipschitz(approx.net, norm="1", seed=args.seed)
    checks = {
        "error": (err, approx.error_bound, err <= approx.error_bound + 1e-9),
        "lip_l1": (lip.value, approx.lip1_bound, lip.value <= approx.lip1_bound + 1e-9),
        "codebook": (approx.weights_in_codebook(), True, approx.weights_in_codebook()),
    }
    for k, (v, bnd, ok) in approx.check_bounds().items():
        checks[k] = (v, bnd, ok)
    out = Path(args.out)
    save_network(approx.net, out / "approximant.json")
    _write_csv(out / "approx_report.csv", ["quantity", "value", "bound", "ok"],
               [[k, v[0], v[1], v[2]] for k, v in checks.items()], args.reproducible)
    ok = all(v[2] for v in checks.values())
    _write_json(out / "approx_report.json", {"command": "approx-fn", "N": args.N, "lip_mode": lip.mode,
                                              "checks": {k: list(v) for k, v in checks.items()}, "ok": ok})
    for k, v in checks.items():
        print(f"{k}: {v[0]} (bound {v[1]}) {'ok' if v[2] else 'VIOLATED'}")
    return EXIT_OK if ok else EXIT_VIOLATION


# --------------------------------------------------------------- transport


def transport_w1_check(tnet, atoms: int = 10_000, cell_atoms: int = 2500) -> dict:
    """Measured W1 between the network push-forward and its mixture, with slack."""
    from .lipschitz_approx import estimate_lipschitz
    from .measures import midpoint_pushforward, mixture_to_discrete
    from .wasserstein import w1

    gen = midpoint_pushforward(tnet.net, atoms)
    target = mixture_to_discrete(tnet.mixture, max(1, cell_atoms // tnet.K**tnet.d))
    lip = estimate_lipschitz(tnet.net, mode="exact").value
    measured = w1(gen, target)
    slack = lip / (4 * atoms) + target.info["slack"] + 1e-9
    bound = float(tnet.w1_bound)
    return {"bound": bound, "measured": measured, "slack": slack, "lip": lip,
            "ok": measured <= bound + slack, "slack_fraction": slack / bound}


def cmd_transport(args) -> int:
    from .measures import UniformMixture
    from .relu_net import save_network
    from .transport import UndefinedRegionError, build_transport_network, cell_mass_check

    if not args.mixture:
        raise UsageError("--mixture is required")
    _positive("s", args.s)
    try:
        mix = UniformMixture.from_json(Path(args.mixture).read_text())
        tnet = build_transport_network(mix, args.s)
    except (OSError, ValueError, TypeError, KeyError) as e:
        # zero weights and unquantized weights land here
        kind = "refusing" if isinstance(e, UndefinedRegionError) else "bad mixture"
        raise UsageError(f"{kind}: {e}") from None
    out = Path(args.out)
    report = cell_mass_check(tnet, seed=args.seed)
    with open(out / "cell_mass.csv", "w", newline="") as fh:
        if not args.reproducible:
            fh.write(f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n")
    with open(out / "cell_mass.csv", "a", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_index", "expected", "measured", "abs_err"])
        for r in report.rows:
            w.writerow([r.cell_index, str(r.expected), str(r.measured), str(r.abs_err)])
    bounds = tnet.check_bounds()
    cert = {"cell_masses_ok": report.passed, "cell_masses_exact": report.exact}
    if tnet.d <= 2:
        cert["w1"] = transport_w1_check(tnet, atoms=args.atoms)
    ok = report.passed and all(v[2] for v in bounds.values()) and cert.get("w1", {}).get("ok", True)
    save_network(tnet.net, out / "transport_net.json")
    _write_json(out / "transport_certificate.json", {
        "command": "transport", "d": tnet.d, "K": tnet.K, "s": tnet.s, "N": tnet.N,
        "depth": tnet.net.depth, "bounds": {k: [str(x) for x in v] for k, v in bounds.items()},
        "certificate": cert, "ok": ok,
    })
    print(f"depth {tnet.net.depth} (= 3 + (d-1)(5+s) = {tnet.depth_claim})")
    print(f"cell masses {'exact match' if report.passed else 'MISMATCH'}; max error {report.max_abs_err}")
    if "w1" in cert:
        c = cert["w1"]
        print(f"W1 {c['measured']:.6g} <= {c['bound']:.6g} + slack {c['slack']:.3g}: {c['ok']}")
    return EXIT_OK if ok else EXIT_VIOLATION


# ---------------------------------------------------------------- pipeline


def _pipeline_point(task):
    from .rectifiable import CURVES, build_pipeline, uniform_parameter_measure

    curve, N, atoms, params = task
    piece = CURVES[curve](**params)
    mu = uniform_parameter_measure(piece.m, atoms)
    # midpoint discretization of the uniform parameter measure, pushed through f
    slack = piece.side * piece.sample.lip / (4 * atoms)
    res = build_pipeline(piece, mu, N, atoms=atoms, target_slack=slack)
    return N, res.certificate


def cmd_pipeline(args) -> int:
    from .rectifiable import CURVES, bit_count, scaling_exponent

    cfg = args.config_doc
    curve = cfg.get("curve", "quarter_circle")
    if curve not in CURVES:
        raise UsageError(f"unknown curve {curve!r}; choose from {sorted(CURVES)}")
    Ns = cfg.get("N", [4, 8, 16, 32])
    Ns = [Ns] if isinstance(Ns, int) else list(Ns)
    if not Ns or any(int(n) != n or n < 1 for n in Ns):
        raise UsageError("N must be a positive integer or a list of them")
    atoms = int(cfg.get("atoms", 4000))
    params = cfg.get("curve_params", {})
    tasks = [(curve, int(n), atoms, params) for n in Ns]
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(_pipeline_point, tasks))
        else:
            results = [_pipeline_point(t) for t in tasks]
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    rows = []
    for N, cert in results:
        (out / f"certificate_N{N}.json").write_text(cert.to_json() + "\n")
        rows.append([N, cert.claimed_w1, cert.measured_w1, cert.slack, cert.metrics["depth"]["value"],
                     cert.metrics["connectivity"]["value"], cert.metrics["width"]["value"], cert.ok])
    _write_csv(out / "pipeline_sweep.csv",
               ["N", "claimed_w1", "measured_w1", "slack", "depth", "connectivity", "width", "ok"],
               rows, args.reproducible)
    errors = [r[2] for r in rows]
    monotone = all(b <= a for a, b in zip(errors, errors[1:]))
    summary = {"command": "pipeline", "curve": curve, "N": Ns, "monotone_error": monotone,
               "ok": all(r[-1] for r in rows)}
    eps = cfg.get("epsilon")
    if eps:
        first = results[0][1]
        C = (first.m + 1) * (first.diam_a * first.lip_f + 1)
        bits = [bit_count(first.m, first.n, C, e) for e in eps]
        _write_csv(out / "pipeline_bits.csv", ["epsilon", "bits"], list(zip(eps, bits)), args.reproducible)
        if len(eps) > 1:
            summary["fitted_exponent"] = scaling_exponent(eps, bits)
    _write_json(out / "pipeline_summary.json", summary)
    for r in rows:
        print(f"N={r[0]}: W1 {r[2]:.6g} <= {r[1]:.6g} + {r[3]:.2g}  ok={r[-1]}")
    return EXIT_OK if summary["ok"] else EXIT_VIOLATION


# -------------------------------------------------------------------- bits


def _parse_kappa(spec: str | None):
    from .rectifiable import kappa_log, kappa_poly

    if spec in (None, "", "none"):
        return None
    if spec == "log":
        return kappa_log
    if spec.startswith("poly:"):
        return kappa_poly(float(spec.split(":", 1)[1]))
    raise UsageError(f"unknown kappa {spec!r}; use none, log or poly:<k>")


def _parse_grid(args) -> list[float]:
    if args.eps:
        grid = [float(v) for v in str(args.eps).split(",") if v.strip()]
    elif args.eps_range:
        lo, hi, count = str(args.eps_range).split(",")
        grid = list(np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(count)))
    else:
        grid = []
    if not grid:
        raise UsageError("empty epsilon grid")
    if any(not 0 < e <= 1 for e in grid):
        raise UsageError("epsilon values must lie in (0, 1]")
    return grid


def cmd_bits(args) -> int:
    from .rectifiable import bit_count, bit_count_countable, check_kappa, scaling_exponent

    grid = _parse_grid(args)
    kappa = _parse_kappa(args.kappa)
    for name in ("m", "n"):
        _positive(name, getattr(args, name))
    if kappa is None:
        bits = [bit_count(args.m, args.n, args.C, e) for e in grid]
    else:
        try:
            check_kappa(kappa, grid)
        except ValueError as e:
            raise UsageError(str(e)) from None
        bits = [bit_count_countable(args.m, args.n, args.C, kappa, e) for e in grid]
    out = Path(args.out)
    _write_csv(out / "bits.csv", ["epsilon", "bits"], [[repr(e), repr(b)] for e, b in zip(grid, bits)],
               args.reproducible)
    doc = {"command": "bits", "m": args.m, "n": args.n, "C": args.C, "kappa": args.kappa or "none"}
    if len(grid) > 1:
        doc["slope"] = scaling_exponent(grid, bits)
        doc["slope_polylog_corrected"] = scaling_exponent(grid, bits, polylog=True)
        print(f"slope {doc['slope']:.4f}, polylog-corrected {doc['slope_polylog_corrected']:.4f}")
    _write_json(out / "bits.json", doc)
    return EXIT_OK


def cmd_entropy(args) -> int:
    from .rectifiable import metric_entropy_bound

    grid = _parse_grid(args)
    _positive("d", args.d)
    rows = [[repr(e), repr(metric_entropy_bound(args.d, e))] for e in grid]
    _write_csv(Path(args.out) / "entropy.csv", ["epsilon", "bits"], rows, args.reproducible)
    for e, b in rows:
        print(f"eps={e}: {b}")
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rectiflow", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file; its keys override flags")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".")
    common.add_argument("--reproducible", action="store_true", help="omit timestamp header lines")
    common.add_argument("--workers", type=int, default=1)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spike", parents=[common], help="spike network suite")
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--N", type=int, default=4)
    s.add_argument("--probes", type=int, default=10_000)
    s.set_defaults(func=cmd_spike)

    a = sub.add_parser("approx-fn", parents=[common], help="quantized approximant of a sampled function")
    a.add_argument("--sample", help="CSV x1..xm,value with a .json sidecar")
    a.add_argument("--N", type=int, default=8)
    a.set_defaults(func=cmd_approx_fn)

    t = sub.add_parser("transport", parents=[common], help="space-filling transport network")
    t.add_argument("--mixture", help="mixture JSON")
    t.add_argument("--s", type=int, default=1)
    t.add_argument("--atoms", type=int, default=10_000)
    t.set_defaults(func=cmd_transport)

    q = sub.add_parser("pipeline", parents=[common], help="end-to-end rectifiable generation sweep")
    q.set_defaults(func=cmd_pipeline)

    b = sub.add_parser("bits", parents=[common], help="bit counts b(eps)")
    b.add_argument("--m", type=int, default=1)
    b.add_argument("--n", type=int, default=2)
    b.add_argument("--C", type=float, default=2.0)
    b.add_argument("--eps", help="comma-separated epsilon values")
    b.add_argument("--eps-range", help="lo,hi,count (log-spaced)")
    b.add_argument("--kappa", help="none, log or poly:<k>")
    b.set_defaults(func=cmd_bits)

    e = sub.add_parser("entropy", parents=[common], help="metric entropy bound for measures on [0,1]^d")
    e.add_argument("--d", type=int, default=1)
    e.add_argument("--eps")
    e.add_argument("--eps-range")
    e.set_defaults(func=cmd_entropy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        doc = {}
        if args.config:
            doc = json.loads(Path(args.config).read_text())
            if not isinstance(doc, dict):
                raise UsageError("config must be a JSON object")
            for k, v in doc.items():
                key = k.replace("-", "_")
                if hasattr(args, key) and key not in ("func", "command"):
                    setattr(args, key, v)
        args.config_doc = doc
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
