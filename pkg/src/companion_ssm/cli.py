"""``companion-ssm`` command line: verify, bench, fit-ar, forecast, construct."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import bench, constructions, data_io, experiments, model, train, verify
from .core import Ssm
from .errors import (
    DataError,
    DimensionError,
    DivergenceError,
    MissingFeedbackError,
    NotControllableError,
    SingularResolventError,
)

EXIT_FAIL = 1
USER_ERRORS = (
    DataError,
    DimensionError,
    DivergenceError,
    MissingFeedbackError,
    NotControllableError,
    SingularResolventError,
    ValueError,
    KeyError,
    OSError,
    json.JSONDecodeError,
)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _int_list(text):
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("expected a non-empty list of positive integers")
    return out


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pow2_range(text):
    """``12:17`` expands to 2^12..2^17; anything else is a plain integer list."""
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return [1 << k for k in range(lo, hi + 1)]
    return _int_list(text)


@contextmanager
def _sink(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _dump_json(obj, path):
    with _sink(path) as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    if path == "-":
        return json.load(sys.stdin)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    results = verify.run_all(seed=args.seed, trials=args.trials, bug=args.inject_bug)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<14} max_error={r.max_error:.3e} tol={r.tol:.0e} trials={r.trials} {status}")
        if not r.passed:
            ok = False
            print(json.dumps({"suite": r.name, "seed": args.seed, "instance": r.worst}), file=sys.stderr)
    print(f"verify: {'passed' if ok else 'FAILED'} in {time.perf_counter() - t0:.1f} s")
    return 0 if ok else EXIT_FAIL


# ----------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    def progress(rec):
        print(f"{rec.algo:<22} ell={rec.ell:<7} d={rec.d:<5} median={rec.median_ns / 1e6:.3f} ms", file=sys.stderr)

    records = bench.run_bench(args.ell, args.d, reps=args.reps, algos=args.algos, seed=args.seed, progress=progress)
    with _sink(args.output) as fh:
        bench.write_csv(records, fh)
    for algo in args.algos:
        for d in args.d:
            if len(args.ell) > 1:
                slope = bench.loglog_slope(records, algo, d)
                print(f"log-log slope {algo} d={d}: {slope:.3f}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- fit-ar


def cmd_fit_ar(args) -> int:
    if args.phi is not None:
        phi = np.asarray(args.phi, dtype=np.float64)
        if phi.size != args.p:
            raise ValueError(f"--phi has {phi.size} coefficients but --p is {args.p}")
    elif args.p in experiments.DEFAULT_AR_ROOTS:
        phi = experiments.default_phi(args.p)
    else:
        phi = _random_stable_phi(args.p, np.random.default_rng(args.seed))
    mode = {"ls": "least_squares", "gd": "gradient"}[args.mode]
    options = {}
    if mode == "gradient":
        options = {"lr": args.lr, "epochs": args.epochs, "n_starts": args.starts, "probe_epochs": args.probe_epochs}
    report = experiments.ar_recovery(
        phi=phi, mode=mode, n_series=args.n_series, length=args.length, seed=args.seed, **options
    )
    if args.freq_csv:
        omega, H = train.frequency_response(report.recovered, args.n_points)
        train.write_frequency_csv(args.freq_csv, omega, H)
        truth = args.freq_csv.rsplit(".", 1)[0] + ".truth.csv"
        train.write_frequency_csv(truth, omega, train.ar_transfer_function(phi, omega))
    out = report.to_dict()
    if not args.trace:
        out.pop("param_trace", None)
    _dump_json(out, args.output)
    return 0


def _random_stable_phi(p, rng):
    half = rng.uniform(0.3, 0.9, size=p // 2) * np.exp(1j * rng.uniform(0.1, 3.0, size=p // 2))
    roots = np.concatenate([half, half.conj()])
    if p % 2:
        roots = np.concatenate([roots, [rng.uniform(-0.9, 0.9)]])
    return data_io.ar_coefficients_from_roots(roots)


# -------------------------------------------------------------- forecast


def _load_network(data) -> model.Network:
    if "schema" in data:
        return model.Network.from_dict(data)
    if "a" in data:
        return model.Network.single(Ssm.from_dict(data))
    raise DataError("model JSON is neither a network nor a single SSM")


def _data_columns(path, requested):
    if requested:
        return requested
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        first = next(reader, [])
    cols = []
    for name, value in zip(header, first):
        try:
            float(value)
            cols.append(name)
        except ValueError:
            pass
    if not cols:
        raise DataError(f"{path}: no numeric columns found; pass --columns")
    return cols


def cmd_forecast(args) -> int:
    if (args.model is None) == (args.build is None):
        raise ValueError("pass exactly one of --model or --build")
    columns = _data_columns(args.data, args.columns)
    raw = data_io.load_csv(args.data, columns)
    m, n = raw.shape
    if args.no_standardize:
        z, stats = raw.copy(), np.column_stack([np.zeros(m), np.ones(m)])
    else:
        z, stats = data_io.standardize(raw)
    train_end, val_end = data_io.split_bounds(n)
    if args.build is not None:
        cfg = dict(_read_json(args.build))
        cfg.update({"m": m, "ell": args.lag, "h": args.horizon, "seed": args.seed})
        net = model.build_forecast_network(cfg)
        net = train.fit_forecast_network(net, z[:, :train_end], ell=args.lag, stride=args.fit_stride)
        if args.save_model:
            _dump_json(net.to_dict(), args.save_model)
    else:
        net = _load_network(_read_json(args.model))
    if net.m != m:
        raise DimensionError(f"model expects {net.m} feature(s), data has {m} ({columns})")
    start = 0 if args.split == "all" else max(0, val_end - args.lag)
    stride = args.stride or args.horizon
    windows = data_io.window(z, args.lag, args.horizon, stride=stride, stats=stats, start=start)
    preds = [model.forecast(net, w.lag, args.horizon, fast=args.fast, workers=args.threads) for w in windows]
    rows = []
    pz, tz = np.stack(preds), np.stack([w.horizon for w in windows])
    p_raw = np.stack([data_io.inverse_standardize(p, stats) for p in preds])
    t_raw = np.stack([data_io.inverse_standardize(w.horizon, stats) for w in windows])
    for wi, w in enumerate(windows):
        for step_i in range(args.horizon):
            for f in range(m):
                rows.append((w.start, step_i + 1, columns[f], p_raw[wi, f, step_i], t_raw[wi, f, step_i]))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window", "step", "feature", "prediction", "truth"])
            for r in rows:
                writer.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4]))])
    mse_z, mae_z = data_io.metrics(pz, tz)
    mse, mae = data_io.metrics(p_raw, t_raw)
    _dump_json(
        {
            "windows": len(windows),
            "lag": args.lag,
            "horizon": args.horizon,
            "features": columns,
            "standardized": not args.no_standardize,
            "mse_standardized": mse_z,
            "mae_standardized": mae_z,
            "mse": mse,
            "mae": mae,
        },
        args.output,
    )
    return 0


# ------------------------------------------------------------- construct


def cmd_construct(args) -> int:
    spec = _read_json(args.spec)
    try:
        built = constructions.from_spec(spec)
    except KeyError as exc:
        raise ValueError(f"construction spec is missing field {exc}") from None
    out = {k: v.to_dict() for k, v in built.items()} if isinstance(built, dict) else built.to_dict()
    _dump_json(out, args.output)
    return 0


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS, help="worker threads for per-channel work")
    common.add_argument("--output", "-o", default=argparse.SUPPRESS, help="output file (default stdout)")

    parser = argparse.ArgumentParser(prog="companion-ssm", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the oracle-equivalence suites")
    p.add_argument("--trials", type=_positive_int, default=50, help="random instances per suite")
    p.add_argument("--inject-bug", choices=verify.BUGS, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="time filter construction and rollout")
    p.add_argument("--ell", type=_pow2_range, default=[1 << k for k in range(12, 18)], help="lengths, e.g. 4096,8192 or 12:17 for powers of two")
    p.add_argument("--d", type=_int_list, default=[1024], help="state sizes")
    p.add_argument("--reps", type=int, default=bench.MIN_REPS, help=f"timed repetitions (>= {bench.MIN_REPS})")
    p.add_argument("--algos", type=lambda s: s.split(","), default=["naive", "fast", "fast+ctilde"], help=f"comma list from {', '.join(bench.ALGOS)}")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit-ar", parents=[common], help="recover an AR(p) transfer function")
    p.add_argument("--p", type=_positive_int, required=True, help="AR order")
    p.add_argument("--mode", choices=("ls", "gd"), default="ls")
    p.add_argument("--phi", type=_float_list, default=None, help="AR coefficients (default: built-in process)")
    p.add_argument("--n-series", type=_positive_int, default=8)
    p.add_argument("--length", type=_positive_int, default=128)
    p.add_argument("--epochs", type=_positive_int, default=2000)
    p.add_argument("--lr", type=float, default=experiments.GD_SETTINGS["lr"])
    p.add_argument("--starts", type=_positive_int, default=3, help="random initializations probed in gd mode")
    p.add_argument("--probe-epochs", type=_positive_int, default=300, help="epochs per probe before keeping the best start")
    p.add_argument("--n-points", type=_positive_int, default=256)
    p.add_argument("--freq-csv", default=None, help="write the fitted frequency response here (truth goes to *.truth.csv)")
    p.add_argument("--trace", action="store_true", help="include per-epoch losses in the report")
    p.set_defaults(func=cmd_fit_ar)

    p = sub.add_parser("forecast", parents=[common], help="forecast a CSV series")
    p.add_argument("--model", default=None, help="network or SSM JSON")
    p.add_argument("--build", default=None, help="network config JSON; decoder C and K are fitted on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--columns", type=lambda s: s.split(","), default=None, help="value columns (default: all numeric)")
    p.add_argument("--lag", type=_positive_int, required=True)
    p.add_argument("--horizon", type=_positive_int, required=True)
    p.add_argument("--stride", type=_positive_int, default=None, help="window stride (default: horizon)")
    p.add_argument("--split", choices=("test", "all"), default="test", help="forecast windows in the test split or everywhere")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--fast", action="store_true", help="spectral closed-loop rollout")
    p.add_argument("--fit-stride", type=_positive_int, default=1)
    p.add_argument("--save-model", default=None, help="with --build, write the fitted network JSON here")
    p.add_argument("--csv", default=None, help="per-step forecasts: window,step,feature,prediction,truth")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("construct", parents=[common], help="closed-form SSM from a JSON spec")
    p.add_argument("spec", help="spec JSON file or - for stdin")
    p.set_defaults(func=cmd_construct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", 0), ("threads", 1), ("output", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
