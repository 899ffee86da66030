"""Monte Carlo comparison of regime estimators with exact regret scoring."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .categorical import CategoricalNet, load_model, net_from_dict, net_to_dict
from .estimators import estimate_nuca, estimate_oracle, estimate_proxy, fit_contingency
from .identification import IdentificationError
from .loglinear import fit_loglinear
from .oracle import PositivityError, regime_spectrum
from .simulator import sample

BASE_METHODS = ("proxy", "nuca", "oracle", "proxy-ll")
ON_EMPTY = ("fail", "uniform", "skip")
QUANTILES = (10, 25, 50, 75, 90)
ZERO_PRINT = 2.23e-16
RECORD_FIELDS = (
    "n", "iteration", "method", "regret", "failed", "reason",
    "regime_index", "min_sv", "negative_cells",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str = "paper"
    sizes: tuple[int, ...] = (25000, 50000, 100000, 250000)
    iterations: int = 1000
    methods: tuple[str, ...] = BASE_METHODS
    ll_orders: tuple[int, ...] = (4, 5, 6, 7, 8)
    seed: int = 0
    alpha: float = 0.0
    on_empty: str = "skip"
    workers: int = 1
    mode: str = "inverse"
    out: str | None = None

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        self.methods = tuple(self.methods)
        self.ll_orders = tuple(int(m) for m in self.ll_orders)
        self.validate()

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError("sample sizes must be positive")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        for m in self.methods:
            if m not in BASE_METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(BASE_METHODS)}")
        if "proxy-ll" in self.methods and not self.ll_orders:
            raise ConfigError("proxy-ll needs at least one log-linear order")
        if self.on_empty not in ON_EMPTY:
            raise ConfigError(f"on_empty must be one of {ON_EMPTY}")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.mode not in ("inverse", "pinv"):
            raise ConfigError("mode must be inverse or pinv")

    def method_names(self) -> list[str]:
        names = []
        for m in self.methods:
            if m == "proxy-ll":
                names += [f"proxy-LL-{k}" for k in self.ll_orders]
            else:
                names.append(m)
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("sizes", "methods", "ll_orders"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class RegretRecord:
    n: int
    iteration: int
    method: str
    regret: float = math.nan
    failed: bool = False
    reason: str = ""
    regime_index: int = -1
    min_sv: float = math.nan
    negative_cells: int = -1

    def sort_key(self):
        return (self.n, self.iteration, self.method)

    def row(self) -> list[str]:
        def num(x):
            return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))

        return [
            str(self.n), str(self.iteration), self.method, num(self.regret),
            str(int(self.failed)), self.reason,
            "" if self.regime_index < 0 else str(self.regime_index),
            num(self.min_sv), "" if self.negative_cells < 0 else str(self.negative_cells),
        ]


# -- worker side ---------------------------------------------------------------

_STATE: dict = {}


def _init_worker(net_dict: dict, regrets: np.ndarray, config: dict) -> None:
    _STATE["net"] = net_from_dict(net_dict)
    _STATE["regrets"] = regrets
    _STATE["config"] = ExperimentConfig.from_dict(config)


def _score(n, iteration, method, estimate, regrets) -> RegretRecord:
    idx = estimate.regime.index()
    diag = estimate.diagnostics
    min_sv = diag.smallest_sv if diag is not None else math.nan
    negatives = int((estimate.joint.joint < 0).sum()) if method.startswith("proxy") else -1
    return RegretRecord(n, iteration, method, float(regrets[idx]), False, "", idx, min_sv, negatives)


def run_iteration(n_index: int, iteration: int) -> list[RegretRecord]:
    """All methods on one dataset; seeds follow (master, n_index, iteration)."""
    net: CategoricalNet = _STATE["net"]
    regrets = _STATE["regrets"]
    cfg: ExperimentConfig = _STATE["config"]
    n = cfg.sizes[n_index]
    data = sample(net, n, (cfg.seed, n_index, iteration), observe_latent=True)
    observed = data.select(net.observed)
    table = fit_contingency(observed, cfg.alpha)
    policy = "uniform" if cfg.on_empty == "uniform" else "fail"
    out = []
    for method in cfg.method_names():
        try:
            if method == "proxy":
                est = estimate_proxy(table, cfg.mode, policy)
            elif method == "nuca":
                est = estimate_nuca(table, policy)
            elif method == "oracle":
                est = estimate_oracle(fit_contingency(data, cfg.alpha))
            else:
                order = int(method.rsplit("-", 1)[1])
                est = estimate_proxy(fit_loglinear(table, order), cfg.mode, policy)
        except (IdentificationError, PositivityError, np.linalg.LinAlgError) as exc:
            if cfg.on_empty == "fail":
                raise
            out.append(RegretRecord(n, iteration, method, failed=True, reason=f"{type(exc).__name__}: {exc}"))
            continue
        out.append(_score(n, iteration, method, est, regrets))
    return out


def _run_item(item):
    return run_iteration(*item)


# -- driver ----------------------------------------------------------------------


def resolve_workers(requested: int) -> int:
    env = os.environ.get("PROXDTR_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"PROXDTR_WORKERS must be an integer, got {env!r}") from None
        if value < 1:
            raise ConfigError("PROXDTR_WORKERS must be >= 1")
        return value
    return requested


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RegretRecord]
    summary: list[dict]
    v_opt: float
    spectrum_regrets: np.ndarray = field(repr=False)


def run_experiment(config: ExperimentConfig, net: CategoricalNet | None = None) -> ExperimentResult:
    net = net if net is not None else load_model(config.model)
    spectrum = regime_spectrum(net)
    items = [(i, it) for i in range(len(config.sizes)) for it in range(config.iterations)]
    args = (net_to_dict(net), spectrum.regrets, config.to_dict())
    if config.workers == 1:
        _init_worker(*args)
        batches = [run_iteration(*item) for item in items]
    else:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=args) as pool:
            batches = list(pool.map(_run_item, items, chunksize=max(1, len(items) // (8 * config.workers))))
    records = sorted((r for b in batches for r in b), key=RegretRecord.sort_key)
    return ExperimentResult(config, records, summarize(records), spectrum.v_opt, spectrum.regrets)


def nearest_rank(sorted_values: list[float], q: float) -> float:
    """Smallest value with at least q% of the sample at or below it."""
    rank = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def summarize(records: list[RegretRecord]) -> list[dict]:
    """Mean and nearest-rank percentiles per (n, method); failures are counted, not scored."""
    groups: dict[tuple[int, str], list[RegretRecord]] = {}
    for r in records:
        groups.setdefault((r.n, r.method), []).append(r)
    rows = []
    for (n, method), recs in sorted(groups.items()):
        ok = sorted(r.regret for r in recs if not r.failed)
        row = {"n": n, "method": method, "count": len(ok), "failures": len(recs) - len(ok)}
        if ok:
            row["mean"] = float(np.mean(ok))
            for q in QUANTILES:
                row[f"q{q}"] = nearest_rank(ok, q)
        else:
            row["note"] = "no successful iterations"
        rows.append(row)
    return rows


def format_stat(value: float) -> str:
    return f"<{ZERO_PRINT:.2e}" if value < ZERO_PRINT else repr(float(value))


def emit_outputs(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "records.csv", out / "summary.csv", out / "regret_diffs.csv", out / "manifest.json"]
        with open(paths[0], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_FIELDS)
            w.writerows(r.row() for r in result.records)
        stats = ["mean"] + [f"q{q}" for q in QUANTILES]
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "method", "count", "failures"] + stats + ["note"])
            for row in result.summary:
                w.writerow(
                    [row["n"], row["method"], row["count"], row["failures"]]
                    + [format_stat(row[s]) if s in row else "" for s in stats]
                    + [row.get("note", "")]
                )
        with open(paths[2], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "iteration", "nuca_regret", "proxy_regret", "difference"])
            for n, it, nuca, proxy in regret_pairs(result.records):
                w.writerow([n, it, repr(nuca), repr(proxy), repr(nuca - proxy)])
        manifest = {
            "tool": "proxdtr",
            "version": __version__,
            "config": result.config.to_dict(),
            "seed": result.config.seed,
            "optimal_value": result.v_opt,
        }
        paths[3].write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return paths


def regret_pairs(records: list[RegretRecord]):
    """(n, iteration, nuca, proxy) wherever both methods succeeded."""
    by_key = {(r.n, r.iteration, r.method): r for r in records if not r.failed}
    for (n, it, method), r in sorted(by_key.items()):
        if method == "nuca" and (n, it, "proxy") in by_key:
            yield n, it, r.regret, by_key[(n, it, "proxy")].regret


def config_from_manifest(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    try:
        return ExperimentConfig.from_dict(manifest["config"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest {path}: {exc}") from exc
