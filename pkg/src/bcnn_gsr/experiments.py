"""Seeded experiment runners: hyper-parameter study, recovery benchmark,
variance study, sensor benchmark and plot-data reshaping.

Every random draw is keyed on ``cfg.seed`` plus fixed integer labels, so a
run with the same configuration writes the same CSV bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .graph import Graph, build_rbf_graph
from .prior import TABLE1, PriorParams
from .recovery import BaselineConfig, RecoveryConfig, gmrf_vb_baseline, recover
from .signals import (
    GaussianMixture1D,
    add_noise_at_snr,
    gen_bandlimited_gmrf,
    gen_ggd_signal,
    gen_gmm_signal,
    make_sampling_mask,
    rng_for,
)
from .training import TrainConfig, TrainingError, estimate_kld, train_prior

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("gmrf", "gmm", "ggd")
MODELS = tuple(TABLE1)
METHODS = ("bcnn_gsr", "gmrf_vb")

# Integer labels that keep the random streams of different purposes apart.
_GRAPH, _TRAIN, _TRUTH, _MASK, _NOISE, _KLD = range(6)


def derive_seed(*keys: int) -> int:
    """A 63-bit integer seed derived from a tuple of nonnegative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def nmse(estimates, truths) -> float:
    """(1/K) sum_k ||xhat_k - x_k||^2 / ||x_k||^2."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.shape != tru.shape:
        raise ValueError("estimates and truths must have the same shape")
    energy = np.sum(tru**2, axis=1)
    if np.any(energy == 0):
        raise ValueError("NMSE undefined for an all-zero truth signal")
    return float(np.mean(np.sum((est - tru) ** 2, axis=1) / energy))


@dataclass(frozen=True)
class ExperimentConfig:
    distributions: tuple = DISTRIBUTIONS
    n_nodes: int = 64
    kernel_width: float = 0.5
    edge_threshold: float = 0.75
    bandwidth: int = 25
    table1_model: str = "BCNN3"
    snr_db: tuple = (10.0, 20.0)
    sampling_ratios: tuple = (0.3, 0.5, 0.7, 0.9)
    k_train: int = 50
    trials: int = 20
    seed: int = 0
    kld_samples: int = 1000
    kld_bins: int = 20
    variance_distribution: str = "gmm"
    variance_trials: int = 100
    variance_snr_db: float = 20.0
    variance_sampling_ratio: float = 1.0
    train: dict = field(default_factory=dict)
    recovery: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("distributions", "snr_db", "sampling_ratios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = [d for d in self.distributions if d not in DISTRIBUTIONS]
        if bad or not self.distributions:
            raise ValueError(f"distributions must be a nonempty subset of {DISTRIBUTIONS}")
        if self.variance_distribution not in DISTRIBUTIONS:
            raise ValueError(f"variance_distribution must be one of {DISTRIBUTIONS}")
        if self.table1_model not in TABLE1:
            raise ValueError(f"table1_model must be one of {MODELS}")
        if self.trials < 1 or self.variance_trials < 1:
            raise ValueError("trials must be >= 1")
        if self.k_train < 1:
            raise ValueError("k_train must be >= 1")
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if not 1 <= self.bandwidth <= self.n_nodes:
            raise ValueError("bandwidth must lie in [1, n_nodes]")
        for r in self.sampling_ratios + (self.variance_sampling_ratio,):
            if not 0.0 < r <= 1.0:
                raise ValueError("sampling ratios must lie in (0, 1]")
        for s in self.snr_db + (self.variance_snr_db,):
            if not math.isfinite(s):
                raise ValueError("SNR values must be finite")
        # Fail early on bad nested settings.
        self.train_config()
        self.recovery_config()
        self.baseline_config()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("distributions", "snr_db", "sampling_ratios"):
            d[name] = list(d[name])
        return d

    def train_config(self, seed: int | None = None) -> TrainConfig:
        opts = dict(self.train)
        opts["seed"] = self.seed if seed is None else seed
        return TrainConfig(**opts)

    def recovery_config(self) -> RecoveryConfig:
        return RecoveryConfig(**self.recovery)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(**self.baseline)


def make_graph(cfg: ExperimentConfig, seed: int | None = None) -> Graph:
    """Random geometric graph on the unit square."""
    s = cfg.seed if seed is None else seed
    coords = rng_for((s, _GRAPH)).uniform(size=(cfg.n_nodes, 2))
    return build_rbf_graph(coords, cfg.kernel_width, cfg.edge_threshold)


def generate_signals(dist: str, g: Graph, count: int, seed, bandwidth: int = 25) -> np.ndarray:
    if dist == "gmrf":
        return gen_bandlimited_gmrf(g, min(bandwidth, g.n), count, seed)
    if dist == "gmm":
        return gen_gmm_signal(GaussianMixture1D(), g.n, count, seed)
    if dist == "ggd":
        return gen_ggd_signal(n=g.n, count=count, seed=seed)
    raise ValueError(f"unknown distribution {dist!r}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


# -- hyper-parameter study -------------------------------------------------------------------


def run_hyperparam_study(cfg: ExperimentConfig, distributions=("gmrf", "gmm")) -> list[tuple]:
    """Train each preset model per distribution and report its KLD diagnostic.

    Rows are (model, distribution, kld); a failed training run gives NaN.
    All three models of one distribution see the same graph and data.
    """
    g = make_graph(cfg)
    rows = []
    for dist in distributions:
        d = DISTRIBUTIONS.index(dist)
        data = generate_signals(dist, g, cfg.k_train, (cfg.seed, _TRAIN, d), cfg.bandwidth)
        for model in MODELS:
            tcfg = cfg.train_config(derive_seed(cfg.seed, _TRAIN, d))
            try:
                theta = train_prior(g, data, tcfg, model).theta
                kld = estimate_kld(theta, g, data, cfg.kld_samples, cfg.kld_bins,
                                   (cfg.seed, _KLD, d), tcfg)
            except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
                log.warning("%s on %s failed: %s", model, dist, exc)
                kld = float("nan")
            rows.append((model, dist, float(kld)))
    return rows


HYPERPARAM_HEADER = ("model", "distribution", "kld")


# -- recovery benchmark -----------------------------------------------------------


def realization_hash(truth, mask, y) -> str:
    h = hashlib.sha256()
    for a in (np.asarray(truth, float), np.asarray(mask.selected, np.int64), np.asarray(y, float)):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _n_observed(n: int, ratio: float) -> int:
    return max(1, int(round(ratio * n)))


@dataclass
class BenchmarkResult:
    summary: list = field(default_factory=list)   # (distribution, snr_db, ratio, method, nmse)
    trials: list = field(default_factory=list)    # (distribution, snr_db, ratio, trial, method, nmse, hash)


def train_benchmark_prior(cfg: ExperimentConfig, g: Graph, dist: str) -> PriorParams:
    d = DISTRIBUTIONS.index(dist)
    data = generate_signals(dist, g, cfg.k_train, (cfg.seed, _TRAIN, d), cfg.bandwidth)
    return train_prior(g, data, cfg.train_config(derive_seed(cfg.seed, _TRAIN, d)),
                       cfg.table1_model).theta


def run_recovery_benchmark(cfg: ExperimentConfig) -> BenchmarkResult:
    """NMSE of BCNN-GSR and GMRF-VB per (distribution, SNR, sampling ratio).

    One prior is trained per distribution. Trial k draws its truth signal
    and noise pattern from streams that do not depend on the SNR or ratio,
    so cells differ only in the swept quantity, and both methods see the
    same (signal, mask, noisy observation) triple.
    """
    g = make_graph(cfg)
    rcfg, bcfg = cfg.recovery_config(), cfg.baseline_config()
    out = BenchmarkResult()
    for dist in cfg.distributions:
        d = DISTRIBUTIONS.index(dist)
        theta = train_benchmark_prior(cfg, g, dist)
        truths = generate_signals(dist, g, cfg.trials, (cfg.seed, _TRUTH, d), cfg.bandwidth)
        for snr in cfg.snr_db:
            for ratio in cfg.sampling_ratios:
                m = _n_observed(g.n, ratio)
                errs = {k: [] for k in METHODS}
                for k in range(cfg.trials):
                    x = truths[k]
                    mask = make_sampling_mask(g.n, m, (cfg.seed, _MASK, d, k, m))
                    obs = add_noise_at_snr(mask.sample(x), snr, (cfg.seed, _NOISE, d, k))
                    tag = realization_hash(x, mask, obs.y)
                    est = {
                        "bcnn_gsr": recover(theta, g, mask, obs.y, rcfg).x_hat,
                        "gmrf_vb": gmrf_vb_baseline(g, mask, obs.y, bcfg).x_hat,
                    }
                    for method in METHODS:
                        e = nmse(est[method], x)
                        errs[method].append(e)
                        out.trials.append((dist, float(snr), float(ratio), k, method, e, tag))
                    log.info("%s snr=%g ratio=%g trial=%d hash=%s", dist, snr, ratio, k, tag)
                for method in METHODS:
                    out.summary.append((dist, float(snr), float(ratio), method,
                                        float(np.mean(errs[method]))))
    return out


BENCH_HEADER = ("distribution", "snr_db", "sampling_ratio", "method", "nmse")
TRIALS_HEADER = ("distribution", "snr_db", "sampling_ratio", "trial", "method", "nmse",
                 "realization_hash")


def sign_test(better, worse) -> float:
    """One-sided paired sign test p-value for ``better < worse`` (ties dropped)."""
    diff = np.asarray(worse, float) - np.asarray(better, float)
    wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


# -- variance study ---------------------------------------------------------------


def run_variance_study(cfg: ExperimentConfig, trials: int | None = None) -> list[tuple]:
    """Per-node mean and variance of BCNN-GSR estimates over repeated trials.

    The truth signal is fixed; every trial draws new training data, a new
    initialization, a new mask and new noise. Rows are
    (node, mean_estimate, variance, truth).
    """
    trials = cfg.variance_trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be >= 1")
    dist = cfg.variance_distribution
    d = DISTRIBUTIONS.index(dist)
    g = make_graph(cfg)
    truth = generate_signals(dist, g, 1, (cfg.seed, _TRUTH, d, 1 << 20), cfg.bandwidth)[0]
    m = _n_observed(g.n, cfg.variance_sampling_ratio)
    rcfg = cfg.recovery_config()
    est = np.empty((trials, g.n))
    for t in range(trials):
        data = generate_signals(dist, g, cfg.k_train, (cfg.seed, _TRAIN, d, t), cfg.bandwidth)
        theta = train_prior(g, data, cfg.train_config(derive_seed(cfg.seed, _TRAIN, d, t)),
                            cfg.table1_model).theta
        mask = make_sampling_mask(g.n, m, (cfg.seed, _MASK, d, t))
        obs = add_noise_at_snr(mask.sample(truth), cfg.variance_snr_db, (cfg.seed, _NOISE, d, t))
        est[t] = recover(theta, g, mask, obs.y, rcfg).x_hat
    mean = est.mean(axis=0)
    var = est.var(axis=0)
    return [(i, float(mean[i]), float(var[i]), float(truth[i])) for i in range(g.n)]


VARIANCE_HEADER = ("node", "mean_estimate", "variance", "truth")


# -- sensor benchmark -------------------------------------------------------------


def run_sensor_benchmark(
    g: Graph,
    signals,
    cfg: ExperimentConfig,
    trials: int = 20,
    snr_db: float = 10.0,
    sampling_ratio: float = 0.5,
    k_train: int = 500,
) -> list[tuple]:
    """Train on the first ``k_train`` signals and recover the next one.

    Both priors are zero-mean, so every signal is centred by the per-node
    mean of the training signals before training and recovery and the mean
    is added back to the estimates. Rows are (trial, method, nmse).
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    if signals.shape[0] <= k_train:
        raise ValueError(f"need more than {k_train} signals to hold one out")
    train = signals[:k_train]
    held = signals[k_train]
    offset = train.mean(axis=0)
    theta = train_prior(g, train - offset, cfg.train_config(derive_seed(cfg.seed, _TRAIN, 99)),
                        cfg.table1_model).theta
    rcfg, bcfg = cfg.recovery_config(), cfg.baseline_config()
    m = _n_observed(g.n, sampling_ratio)
    rows = []
    for k in range(trials):
        mask = make_sampling_mask(g.n, m, (cfg.seed, _MASK, 99, k))
        obs = add_noise_at_snr(mask.sample(held), snr_db, (cfg.seed, _NOISE, 99, k))
        y = obs.y - mask.sample(offset)
        est = {
            "bcnn_gsr": recover(theta, g, mask, y, rcfg).x_hat + offset,
            "gmrf_vb": gmrf_vb_baseline(g, mask, y, bcfg).x_hat + offset,
        }
        for method in METHODS:
            rows.append((k, method, nmse(est[method], held)))
    return rows


SENSOR_HEADER = ("trial", "method", "nmse")


# -- plot data --------------------------------------------------------------------

PLOT_HEADER = ("x", "y", "series")


def emit_plot_data(results_csv, out_dir) -> list[Path]:
    """Reshape a results CSV into plot-ready (x, y, series) files.

    * benchmark summaries give one ``nmse_vs_ratio_snr<snr>.csv`` per SNR with
      one series per (method, distribution) pair;
    * variance-study output gives ``mean_per_node.csv`` (series ``mean`` and
      ``truth``) and ``variance_per_node.csv``;
    * hyper-parameter output gives ``kld_by_model.csv`` with one series per
      distribution.

    A benchmark file without data rows yields an empty ``nmse_vs_ratio.csv``.
    """
    header, rows = read_csv(results_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name, series_rows):
        path = out / name
        write_csv(path, PLOT_HEADER, series_rows)
        written.append(path)

    cols = set(header)
    if {"distribution", "snr_db", "sampling_ratio", "method", "nmse"} <= cols:
        if not rows:
            emit("nmse_vs_ratio.csv", [])
        by_snr: dict[float, list] = {}
        for r in rows:
            by_snr.setdefault(float(r["snr_db"]), []).append(r)
        for snr in sorted(by_snr):
            pts = sorted(
                (f"{r['method']}/{r['distribution']}", float(r["sampling_ratio"]), float(r["nmse"]))
                for r in by_snr[snr]
            )
            emit(f"nmse_vs_ratio_snr{snr:g}.csv", [(x, y, s) for s, x, y in pts])
    elif {"node", "mean_estimate", "variance", "truth"} <= cols:
        emit("mean_per_node.csv",
             [(int(r["node"]), float(r["mean_estimate"]), "mean") for r in rows]
             + [(int(r["node"]), float(r["truth"]), "truth") for r in rows])
        emit("variance_per_node.csv",
             [(int(r["node"]), float(r["variance"]), "variance") for r in rows])
    elif {"model", "distribution", "kld"} <= cols:
        emit("kld_by_model.csv",
             [(r["model"], float(r["kld"]), r["distribution"]) for r in rows])
    else:
        raise ValueError(f"unrecognized results header: {header}")
    return written
