"""Contrastive-divergence training of the graph prior and a histogram KLD diagnostic."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph
from .prior import (
    LangevinDivergence,
    PriorEvaluationError,
    PriorParams,
    grad_params_log_density,
    sample_prior_gibbs,
    sample_prior_langevin,
)
from .signals import Patch, extract_patches, rng_for

log = logging.getLogger(__name__)

SAMPLERS = ("langevin", "gibbs")
OPTIMIZERS = ("sgd", "adam")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    cd_steps: int = 5
    langevin_step: float = 0.02
    batch_size: int = 64
    max_iter: int = 1000
    conv_tol: float = 1e-4
    patch_size: int = 5
    patches_per_iter: int = 64
    seed: int = 0
    sampler: str = "gibbs"
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        for name in ("cd_steps", "batch_size", "patches_per_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.langevin_step <= 0:
            raise ValueError("langevin_step must be positive")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass(frozen=True)
class PatchBatch:
    """Equal-size patches stacked for vectorized evaluation."""

    L_scaled: np.ndarray   # (B, s, s)
    values: np.ndarray     # (B, s)

    @classmethod
    def from_patches(cls, patches: list[Patch]) -> "PatchBatch":
        if not patches:
            raise ValueError("empty patch batch")
        sizes = {p.values.size for p in patches}
        if len(sizes) != 1:
            raise ValueError("all patches in a batch must have the same size")
        return cls(
            np.stack([p.graph.L_scaled for p in patches]),
            np.stack([p.values for p in patches]),
        )

    def __len__(self) -> int:
        return self.values.shape[0]


def run_chains(theta: PriorParams, batch: PatchBatch, steps: int, cfg: TrainConfig, seed):
    """Model samples started at the data, one chain per patch."""
    if cfg.sampler == "gibbs":
        return sample_prior_gibbs(theta, batch.L_scaled, batch.values, steps, seed)
    return sample_prior_langevin(
        theta, batch.L_scaled, batch.values, steps, cfg.langevin_step, seed
    )


@dataclass
class UpdateInfo:
    aborted: bool = False
    message: str = ""
    grad_norm: float = 0.0


class Adam:
    """Adam moment estimates for the flattened (beta, logits) vector."""

    def __init__(self, size: int, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.b1, self.b2, self.eps = b1, b2, eps

    def direction(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def cd_update(
    theta: PriorParams,
    batch: PatchBatch,
    cfg: TrainConfig,
    seed,
    model_samples=None,
    adam: Adam | None = None,
):
    """One CD-k step: theta - lr * (<dlogp>_model - <dlogp>_data).

    With ``adam`` the difference is rescaled by running moment estimates
    before the step. ``model_samples`` bypasses the sampler (test hook). On
    sampler divergence the update is skipped and ``theta`` is returned
    unchanged.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    try:
        if model_samples is None:
            model_samples = run_chains(theta, batch, cfg.cd_steps, cfg, seed)
        g_data = grad_params_log_density(theta, batch.L_scaled, batch.values)
        g_model = grad_params_log_density(theta, batch.L_scaled, model_samples)
    except (LangevinDivergence, PriorEvaluationError) as exc:
        log.warning("CD update aborted: %s", exc)
        return theta, UpdateInfo(aborted=True, message=str(exc))
    d_beta = g_model.beta - g_data.beta
    d_logits = g_model.logits - g_data.logits
    if not (np.all(np.isfinite(d_beta)) and np.all(np.isfinite(d_logits))):
        return theta, UpdateInfo(aborted=True, message="non-finite gradient")
    norm = float(np.sqrt(np.sum(d_beta**2) + np.sum(d_logits**2)))
    if adam is not None:
        step = adam.direction(np.concatenate([d_beta.ravel(), d_logits.ravel()]))
        d_beta = step[: d_beta.size].reshape(d_beta.shape)
        d_logits = step[d_beta.size:].reshape(d_logits.shape)
    new = theta.replace(
        beta=theta.beta - cfg.learning_rate * d_beta,
        pi_logits=theta.pi_logits - cfg.learning_rate * d_logits,
    )
    if not (np.all(np.isfinite(new.beta)) and np.all(np.isfinite(new.pi_logits))):
        return theta, UpdateInfo(aborted=True, message="non-finite parameter update")
    return new, UpdateInfo(grad_norm=norm)


@dataclass
class TraceRow:
    iteration: int
    param_delta: float
    kld_estimate: float
    wall_time_ms: float


@dataclass
class TrainResult:
    theta: PriorParams
    trace: list[TraceRow] = field(default_factory=list)
    converged: bool = False


def train_prior(
    g: Graph,
    training_signals,
    cfg: TrainConfig,
    hyper: str | PriorParams = "BCNN3",
    kld_every: int = 0,
    kld_samples: int = 500,
    kld_bins: int = 20,
) -> TrainResult:
    """Repeat patch extraction and CD updates until the sup-norm parameter
    change drops below ``cfg.conv_tol`` or ``cfg.max_iter`` iterations pass."""
    signals = np.atleast_2d(np.asarray(training_signals, dtype=float))
    if signals.shape[0] < 1:
        raise ValueError("need at least one training signal")
    if isinstance(hyper, PriorParams):
        theta = hyper
    else:
        theta = PriorParams.from_table1(hyper, seed=(cfg.seed, 1))
    rng = rng_for((cfg.seed, 2))
    result = TrainResult(theta)
    t0 = time.perf_counter()
    failures = 0
    adam = Adam(theta.flat().size) if cfg.optimizer == "adam" else None
    for it in range(1, cfg.max_iter + 1):
        patches = extract_patches(g, signals, cfg.patch_size, cfg.patches_per_iter, rng)
        before = theta.flat()
        any_ok = False
        for start in range(0, len(patches), cfg.batch_size):
            batch = PatchBatch.from_patches(patches[start:start + cfg.batch_size])
            theta, info = cd_update(theta, batch, cfg, rng, adam=adam)
            any_ok |= not info.aborted
        failures = 0 if any_ok else failures + 1
        if failures >= 10:
            raise TrainingError("10 consecutive iterations aborted (sampler divergence)")
        delta = float(np.max(np.abs(theta.flat() - before)))
        kld = np.nan
        if kld_every and it % kld_every == 0:
            kld = estimate_kld(theta, g, signals, kld_samples, kld_bins, (cfg.seed, 3, it), cfg)
        result.trace.append(TraceRow(it, delta, kld, 1e3 * (time.perf_counter() - t0)))
        result.theta = theta
        if any_ok and delta < cfg.conv_tol:
            result.converged = True
            break
    return result


def write_trace_csv(path, trace: list[TraceRow], timing: bool = True) -> None:
    """Write the training trace; ``timing=False`` blanks wall times to ``nan``
    so that reruns produce identical bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "param_delta", "kld_estimate", "wall_time_ms"])
        for r in trace:
            wall = f"{r.wall_time_ms:.3f}" if timing else "nan"
            w.writerow([r.iteration, f"{r.param_delta:.17g}", f"{r.kld_estimate:.17g}", wall])


# -- KLD diagnostic -------------------------------------------------------------


def histogram_kld(data, model, bins: int = 20) -> float:
    """Mean over coordinates of the discrete KL(data || model).

    Bins span the data range padded by 10% per coordinate; model values
    outside the range fall into the edge bins. Counts get add-one smoothing.
    """
    data = np.asarray(data, dtype=float)
    model = np.asarray(model, dtype=float)
    if data.ndim == 1:
        data, model = data[:, None], model.reshape(-1, 1)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    total = 0.0
    for j in range(data.shape[1]):
        lo, hi = data[:, j].min(), data[:, j].max()
        pad = 0.1 * (hi - lo) if hi > lo else 0.5
        edges = np.linspace(lo - pad, hi + pad, bins + 1)
        p = np.histogram(data[:, j], edges)[0] + 1.0
        q = np.histogram(np.clip(model[:, j], edges[0], edges[-1]), edges)[0] + 1.0
        p /= p.sum()
        q /= q.sum()
        total += float(np.sum(p * np.log(p / q)))
    return total / data.shape[1]


def estimate_kld(
    theta: PriorParams,
    g: Graph,
    data_signals,
    n_model_samples: int = 1000,
    bins: int = 20,
    seed=0,
    cfg: TrainConfig | None = None,
) -> float:
    """Histogram KLD between data patches and prior samples on the same patches.

    Chains start at the data patches and run ten times the training CD length,
    using the sampler selected in ``cfg``.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n_model_samples < 100:
        raise ValueError("need at least 100 model samples")
    cfg = cfg or TrainConfig()
    rng = rng_for(seed)
    patches = extract_patches(g, data_signals, cfg.patch_size, n_model_samples, rng)
    batch = PatchBatch.from_patches(patches)
    samples = run_chains(theta, batch, 10 * cfg.cd_steps, cfg, rng)
    return histogram_kld(batch.values, samples, bins)
