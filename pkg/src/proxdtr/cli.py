"""Command-line entry point: ``proxdtr <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .categorical import ModelError, exact_joint, load_model, marginalize
from .estimators import (
    estimate_nuca,
    estimate_oracle,
    estimate_proxy,
    fit_contingency,
    fit_loglinear,
)
from .harness import (
    BASE_METHODS,
    ConfigError,
    ExperimentConfig,
    config_from_manifest,
    emit_outputs,
    format_stat,
    resolve_workers,
    run_experiment,
)
from .identification import IdentificationError, build_id_inputs, identify_k2
from .oracle import PositivityError, Regime, regime_spectrum, regime_value, regret
from .simulator import Dataset, sample

EXIT_CONFIG = 2


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> list[str]:
    items = [x.strip() for x in text.split(",") if x.strip()]
    for m in items:
        if m not in BASE_METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}")
    return items


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_simulate(args) -> int:
    net = load_model(args.model)
    data = sample(net, args.n, (args.seed, args.iteration), observe_latent=args.observe_latent)
    data.to_csv(args.out)
    print(f"wrote {data.n} rows x {len(data.variables)} columns to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    net = load_model(args.model)
    regime = Regime.load(args.regime)
    value = regime_value(net, regime)
    _write_json({"value": value, "regret": regret(net, regime), "regime": regime.to_dict()}, args.out)
    return 0


def cmd_spectrum(args) -> int:
    spectrum = regime_spectrum(load_model(args.model))
    spectrum.to_csv(args.out)
    distinct = spectrum.distinct_regrets(10)
    print(f"{len(spectrum)} regimes, optimal value {spectrum.v_opt!r}, {len(distinct)} distinct regrets")
    return 0


def cmd_identify(args) -> int:
    net = load_model(args.model) if args.model else None
    if args.mode == "population":
        if net is None:
            raise ConfigError("population mode needs --model")
        source = marginalize(exact_joint(net), net.observed)
    else:
        if not args.data:
            raise ConfigError("data mode needs --data")
        data = Dataset.from_csv(args.data)
        if net is not None:
            data = data.select(net.observed)
        source = fit_contingency(data, args.alpha)
    cf = identify_k2(build_id_inputs(source, args.on_empty), args.method)
    _write_json({"joint": cf.to_dict(), "diagnostics": cf.diagnostics.to_dict()}, args.out)
    return 0


def cmd_estimate(args) -> int:
    data = Dataset.from_csv(args.data)
    observed = [v for v in data.variables if not v.startswith("U")]
    table = fit_contingency(data.select(observed), args.alpha)
    payload: dict = {"method": args.method}
    if args.method == "proxy":
        est = estimate_proxy(table, args.id_method, args.on_empty)
    elif args.method == "proxy-ll":
        fit = fit_loglinear(table, args.ll_order)
        payload["loglinear"] = {
            "order": fit.order,
            "iterations": fit.iterations,
            "max_discrepancy": fit.max_discrepancy,
            "converged": fit.converged,
        }
        est = estimate_proxy(fit, args.id_method, args.on_empty)
    elif args.method == "nuca":
        est = estimate_nuca(table, args.on_empty)
    else:
        est = estimate_oracle(fit_contingency(data, args.alpha))
    payload["regime"] = est.regime.to_dict()
    if est.diagnostics is not None:
        payload["diagnostics"] = est.diagnostics.to_dict()
    _write_json(payload, args.out)
    return 0


def _run_and_emit(config: ExperimentConfig, out: str) -> int:
    result = run_experiment(config)
    emit_outputs(result, out)
    for row in result.summary:
        stats = " ".join(
            f"{k}={format_stat(row[k])}" for k in ("mean", "q10", "q50", "q90") if k in row
        )
        print(f"n={row['n']:<7} {row['method']:<12} ok={row['count']:<5} failed={row['failures']:<4} {stats}")
    return 0


def cmd_experiment(args) -> int:
    config = ExperimentConfig(
        model=args.model,
        sizes=tuple(args.n),
        iterations=args.iters,
        methods=tuple(args.methods),
        ll_orders=tuple(args.ll_orders),
        seed=args.seed,
        alpha=args.alpha,
        on_empty=args.on_empty,
        workers=resolve_workers(args.workers),
        mode=args.id_method,
        out=args.out,
    )
    return _run_and_emit(config, args.out)


def cmd_rerun(args) -> int:
    config = config_from_manifest(args.manifest)
    config.workers = resolve_workers(args.workers or config.workers)
    config.out = args.out
    return _run_and_emit(config, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxdtr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a dataset from a model")
    s.add_argument("--model", default="paper")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iteration", type=int, default=0)
    s.add_argument("--observe-latent", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="exact value and regret of a regime")
    s.add_argument("--model", default="paper")
    s.add_argument("--regime", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("spectrum", help="value and regret of every regime")
    s.add_argument("--model", default="paper")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("identify", help="proxy-identified counterfactual joint")
    s.add_argument("--model")
    s.add_argument("--mode", choices=("population", "data"), default="population")
    s.add_argument("--data")
    s.add_argument("--method", choices=("inverse", "pinv"), default="inverse")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--on-empty", choices=("fail", "uniform"), default="fail")
    s.add_argument("--out")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("estimate", help="estimate a regime from a dataset")
    s.add_argument("--method", choices=BASE_METHODS, required=True)
    s.add_argument("--ll-order", type=int, default=6)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--id-method", choices=("inverse", "pinv"), default="inverse")
    s.add_argument("--on-empty", choices=("fail", "uniform"), default="fail")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("experiment", help="Monte Carlo comparison of the estimators")
    s.add_argument("--model", default="paper")
    s.add_argument("--n", type=_ints, default=[25000, 50000, 100000, 250000])
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--methods", type=_methods, default=list(BASE_METHODS))
    s.add_argument("--ll-orders", type=_ints, default=[4, 5, 6, 7, 8])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--on-empty", choices=("fail", "uniform", "skip"), default="skip")
    s.add_argument("--id-method", choices=("inverse", "pinv"), default="inverse")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("rerun", help="repeat an experiment from its manifest.json")
    s.add_argument("--manifest", required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rerun)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdentificationError, PositivityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
