"""Energy-based graph-signal prior: Chebyshev filter bank + Gaussian-mixture potentials.

    log p(x) = sum_m log sum_c pi_mc N(f_m(x); 0, sigma2_mc I) - log Z

with f_m(x) = sum_p beta_mp T_p(L~) x. Every function below accepts either a
single signal on a :class:`Graph`, or a batch of signals of shape (B, n)
together with a stacked (B, n, n) array of scaled Laplacians (one per
patch), which is how training evaluates many small subgraphs at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .graph import Graph, chebyshev_basis, chebyshev_matrices
from .signals import rng_for

LOG_2PI = float(np.log(2.0 * np.pi))

# Preset models: GMM standard deviations are 0.001 / delta.
DELTA_SETS = {
    1: (-7.0, -3.0, 0.0, 3.0, 7.0),
    2: (-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0),
}
TABLE1 = {
    "BCNN1": {"n_filters": 6, "sigma_set": 1},
    "BCNN2": {"n_filters": 8, "sigma_set": 1},
    "BCNN3": {"n_filters": 8, "sigma_set": 2},
}
CHEBYSHEV_ORDER = 3


class PriorEvaluationError(FloatingPointError):
    pass


class LangevinDivergence(RuntimeError):
    pass


def table1_sigma2(sigma_set: int) -> np.ndarray:
    """Component variances (0.001 / delta)^2 for one of the two preset sets."""
    delta = np.exp(np.asarray(DELTA_SETS[sigma_set]))
    return (0.001 / delta) ** 2


@dataclass(frozen=True, eq=False)
class PriorParams:
    beta: np.ndarray        # (M, P+1)
    pi_logits: np.ndarray   # (M, C)
    sigma2: np.ndarray      # (M, C), fixed

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, ndmin=2)
        logits = np.array(self.pi_logits, dtype=float, ndmin=2)
        sigma2 = np.array(self.sigma2, dtype=float, ndmin=2)
        if beta.shape[0] != logits.shape[0] or logits.shape != sigma2.shape:
            raise ValueError("inconsistent prior parameter shapes")
        if not np.all(np.isfinite(beta)) or not np.all(np.isfinite(logits)):
            raise ValueError("prior parameters must be finite")
        if np.any(sigma2 <= 0):
            raise ValueError("component variances must be positive")
        for name, a in (("beta", beta), ("pi_logits", logits), ("sigma2", sigma2)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    @property
    def P(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def C(self) -> int:
        return self.sigma2.shape[1]

    @property
    def pi(self) -> np.ndarray:
        return softmax(self.pi_logits, axis=1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel(), self.pi_logits.ravel()])

    def replace(self, beta=None, pi_logits=None) -> "PriorParams":
        return PriorParams(
            self.beta if beta is None else beta,
            self.pi_logits if pi_logits is None else pi_logits,
            self.sigma2,
        )

    @classmethod
    def initialize(cls, n_filters: int, sigma2_row, order: int = CHEBYSHEV_ORDER, seed=0):
        """beta ~ U[-0.1, 0.1], uniform mixture weights."""
        sigma2_row = np.asarray(sigma2_row, dtype=float)
        beta = rng_for(seed).uniform(-0.1, 0.1, size=(n_filters, order + 1))
        return cls(
            beta,
            np.zeros((n_filters, sigma2_row.size)),
            np.tile(sigma2_row, (n_filters, 1)),
        )

    @classmethod
    def from_table1(cls, model: str, order: int = CHEBYSHEV_ORDER, seed=0):
        preset = TABLE1[model]
        return cls.initialize(preset["n_filters"], table1_sigma2(preset["sigma_set"]), order, seed)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "P": self.P,
            "C": self.C,
            "beta": self.beta.tolist(),
            "pi_logits": self.pi_logits.tolist(),
            "sigma2": self.sigma2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorParams":
        theta = cls(d["beta"], d["pi_logits"], d["sigma2"])
        if (theta.M, theta.P, theta.C) != (d["M"], d["P"], d["C"]):
            raise ValueError("declared M/P/C disagree with the arrays")
        return theta

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "PriorParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _scaled(g) -> np.ndarray:
    return g.L_scaled if isinstance(g, Graph) else np.asarray(g, dtype=float)


def _component_logs(theta: PriorParams, g, x):
    """Filter basis, filter outputs and per-component log densities."""
    x = np.asarray(x, dtype=float)
    Tx = chebyshev_basis(_scaled(g), x, theta.P)            # (..., P+1, n)
    f = np.einsum("mp,...pn->...mn", theta.beta, Tx)        # (..., M, n)
    sq = np.einsum("...mn,...mn->...m", f, f)               # (..., M)
    n = x.shape[-1]
    log_pi = np.log(theta.pi)
    logc = (
        log_pi
        - 0.5 * n * (LOG_2PI + np.log(theta.sigma2))
        - sq[..., None] / (2.0 * theta.sigma2)
    )
    return Tx, f, logc


def _check_finite(logc):
    bad = ~np.isfinite(logc)
    if np.any(bad):
        m, c = np.argwhere(bad)[0][-2:]
        raise PriorEvaluationError(f"non-finite log density in filter {m}, component {c}")


def log_unnorm_density(theta: PriorParams, g, x):
    """sum_m log sum_c pi_mc N(f_m(x); 0, sigma2_mc I), without log Z."""
    _, _, logc = _component_logs(theta, g, x)
    _check_finite(logc)
    return logsumexp(logc, axis=-1).sum(axis=-1)


def responsibilities(theta: PriorParams, g, x) -> np.ndarray:
    """Posterior component probabilities per filter, shape (..., M, C)."""
    _, _, logc = _component_logs(theta, g, x)
    _check_finite(logc)
    return softmax(logc, axis=-1)


def _precision_weights(theta, logc):
    r = softmax(logc, axis=-1)
    return r, np.einsum("...mc,mc->...m", r, 1.0 / theta.sigma2)


def grad_x_log_density(theta: PriorParams, g, x) -> np.ndarray:
    """Score: sum_m F_m (-w_m f_m(x)), with w_m = sum_c r_mc / sigma2_mc."""
    _, f, logc = _component_logs(theta, g, x)
    _check_finite(logc)
    _, w = _precision_weights(theta, logc)
    u = -w[..., None] * f                                   # (..., M, n)
    L = _scaled(g)
    if L.ndim > 2:
        L = L[..., None, :, :]
    Tu = chebyshev_basis(L, u, theta.P)                     # (..., M, P+1, n)
    return np.einsum("mp,...mpn->...n", theta.beta, Tu)


@dataclass(frozen=True)
class ParamGrad:
    beta: np.ndarray
    logits: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel(), self.logits.ravel()])


def grad_params_log_density(theta: PriorParams, g, x) -> ParamGrad:
    """Gradient of the unnormalized log density w.r.t. beta and the mixture logits.

    For a batch of signals the gradient is averaged over the batch.
    """
    Tx, f, logc = _component_logs(theta, g, x)
    _check_finite(logc)
    r, w = _precision_weights(theta, logc)
    dbeta = -np.einsum("...m,...mn,...pn->...mp", w, f, Tx)
    dlogits = r - theta.pi
    if dbeta.ndim > 2:
        lead = tuple(range(dbeta.ndim - 2))
        dbeta, dlogits = dbeta.mean(axis=lead), dlogits.mean(axis=lead)
    return ParamGrad(dbeta, dlogits)


def sample_prior_langevin(
    theta: PriorParams, g, x_init, steps: int, step_size: float, seed, max_norm: float = 1e6
) -> np.ndarray:
    """Unadjusted Langevin chain(s) started at ``x_init``; returns the final state."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    rng = rng_for(seed)
    x = np.array(x_init, dtype=float)
    half = 0.5 * step_size**2
    for j in range(steps):
        x = x + half * grad_x_log_density(theta, g, x) + step_size * rng.standard_normal(x.shape)
        norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
        if not np.all(np.isfinite(norms)) or norms.max() > max_norm:
            raise LangevinDivergence(
                f"Langevin chain diverged at step {j + 1}: |x| = {norms.max():.3g}"
            )
    return x


def filter_matrices(theta: PriorParams, g) -> np.ndarray:
    """Dense F_m for every filter: shape (..., M, n, n)."""
    T = chebyshev_matrices(_scaled(g), theta.P)             # (..., P+1, n, n)
    return np.einsum("mp,...pij->...mij", theta.beta, T)


def sample_prior_gibbs(theta: PriorParams, g, x_init, sweeps: int, seed) -> np.ndarray:
    """Blocked Gibbs sampling via the latent component labels.

    Conditioned on one label z_m per filter the prior is Gaussian with
    precision Q_z = sum_m F_m^T F_m / sigma2_{m z_m}; conditioned on x the
    labels are independent draws from the responsibilities. Both conditionals
    are exact, so there is no step size to tune.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    rng = rng_for(seed)
    x = np.array(x_init, dtype=float)
    F = filter_matrices(theta, g)
    FtF = np.einsum("...mki,...mkj->...mij", F, F)
    for _ in range(sweeps):
        r = responsibilities(theta, g, x)                   # (..., M, C)
        u = rng.random(r.shape[:-1] + (1,))
        z = np.minimum((np.cumsum(r, axis=-1) < u).sum(axis=-1), theta.C - 1)
        inv_var = 1.0 / np.take_along_axis(
            np.broadcast_to(theta.sigma2, r.shape), z[..., None], axis=-1
        )[..., 0]
        Q = np.einsum("...m,...mij->...ij", inv_var, FtF)
        lam, V = np.linalg.eigh(Q)
        floor = 1e-12 * lam[..., -1:]
        lam = np.maximum(lam, floor)
        xi = rng.standard_normal(x.shape)
        x = np.einsum("...ij,...j->...i", V, xi / np.sqrt(lam))
    return x
