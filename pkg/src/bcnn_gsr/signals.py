"""Synthetic graph signals, sampling masks, noise injection and patches."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, bfs_order, induced_subgraph


def rng_for(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence(list(seed)))
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SamplingMask:
    selected: np.ndarray
    n: int

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=int)
        if sel.ndim != 1 or sel.size > self.n:
            raise ValueError("mask must list at most N indices")
        if np.unique(sel).size != sel.size:
            raise ValueError("mask indices must be distinct")
        if sel.size and (sel.min() < 0 or sel.max() >= self.n):
            raise ValueError("mask index out of range")
        object.__setattr__(self, "selected", sel)

    @property
    def m(self) -> int:
        return self.selected.size

    @property
    def matrix(self) -> np.ndarray:
        """The M x N selection matrix (one unit entry per row)."""
        psi = np.zeros((self.m, self.n))
        psi[np.arange(self.m), self.selected] = 1.0
        return psi

    def sample(self, x) -> np.ndarray:
        return np.asarray(x)[..., self.selected]

    def lift(self, y) -> np.ndarray:
        """Psi^T y."""
        out = np.zeros(self.n)
        out[self.selected] = y
        return out


@dataclass(frozen=True)
class NoisyObservation:
    y: np.ndarray
    sigma_e2_true: float
    snr_db: float


@dataclass(frozen=True)
class GaussianMixture1D:
    means: tuple = (-3.0, -1.0, 1.0, 3.0)
    variances: tuple = (0.5, 0.5, 0.5, 0.5)
    weights: tuple = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        m, v, w = (np.asarray(a, dtype=float) for a in (self.means, self.variances, self.weights))
        if not (m.shape == v.shape == w.shape) or m.ndim != 1:
            raise ValueError("means, variances and weights must have equal length")
        if np.any(v < 0):
            raise ValueError("negative mixture variance")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def variance(self) -> float:
        w, m, v = (np.asarray(a, dtype=float) for a in (self.weights, self.means, self.variances))
        return float(np.dot(w, v + m**2) - np.dot(w, m) ** 2)


def gen_bandlimited_gmrf(g: Graph, bandwidth: int, count: int, seed) -> np.ndarray:
    """Random combinations of the ``bandwidth`` lowest-frequency Laplacian eigenvectors."""
    if not 1 <= bandwidth <= g.n:
        raise ValueError(f"bandwidth must be in [1, {g.n}]")
    _, U = np.linalg.eigh(g.L)
    gamma = rng_for(seed).standard_normal((count, bandwidth))
    return gamma @ U[:, :bandwidth].T


def gen_gmm_signal(
    mixture: GaussianMixture1D, n: int, count: int, seed, iid: bool = True
) -> np.ndarray:
    """Draw signals from a scalar Gaussian mixture.

    With ``iid`` every coordinate picks its own component; otherwise one
    component is drawn per signal and shared by all of its coordinates.
    """
    rng = rng_for(seed)
    w = np.asarray(mixture.weights, dtype=float)
    means = np.asarray(mixture.means, dtype=float)
    std = np.sqrt(np.asarray(mixture.variances, dtype=float))
    shape = (count, n) if iid else (count, 1)
    comp = rng.choice(w.size, size=shape, p=w)
    comp = np.broadcast_to(comp, (count, n))
    return means[comp] + std[comp] * rng.standard_normal((count, n))


def gen_ggd_signal(
    shape: float = 2.0,
    power: float = 1.5,
    scale: float = 1.0,
    n: int = 64,
    count: int = 1,
    seed=None,
    symmetrize: bool = True,
) -> np.ndarray:
    """Generalized-Gamma coordinates, density ~ x^(shape-1) exp(-(x/scale)^power).

    Sampled as scale * G^(1/power) with G ~ Gamma(shape/power, 1).
    """
    if shape <= 0 or power <= 0 or scale <= 0:
        raise ValueError("generalized Gamma parameters must be positive")
    rng = rng_for(seed)
    g = rng.gamma(shape / power, 1.0, size=(count, n))
    x = scale * g ** (1.0 / power)
    if symmetrize:
        x *= rng.choice((-1.0, 1.0), size=(count, n))
    return x


def make_sampling_mask(n: int, m: int, seed) -> SamplingMask:
    if not 0 <= m <= n:
        raise ValueError("need 0 <= M <= N")
    sel = np.sort(rng_for(seed).choice(n, size=m, replace=False))
    return SamplingMask(sel, n)


def add_noise_at_snr(clean, snr_db: float, seed) -> NoisyObservation:
    """Add white Gaussian noise scaled to ``snr_db`` relative to the clean power."""
    clean = np.asarray(clean, dtype=float)
    power = float(clean @ clean) / clean.size
    if power == 0.0:
        raise ValueError("cannot set an SNR for an all-zero signal")
    sigma2 = power * 10.0 ** (-snr_db / 10.0)
    noise = np.sqrt(sigma2) * rng_for(seed).standard_normal(clean.size)
    nn = float(noise @ noise)
    realized = 10.0 * np.log10(power * clean.size / nn) if nn > 0 else np.inf
    return NoisyObservation(clean + noise, sigma2, realized)


@dataclass(frozen=True)
class Patch:
    nodes: np.ndarray
    graph: Graph
    values: np.ndarray
    signal_index: int = field(default=-1)


def extract_patches(g: Graph, signals, patch_size: int, count: int, seed) -> list[Patch]:
    """Graph-local sub-signals: BFS balls of ``patch_size`` nodes.

    Each draw picks a signal and a source vertex uniformly at random; sources
    whose component is too small are rejected and redrawn.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    if patch_size < 2:
        raise ValueError("patch_size must be at least 2")
    if patch_size > g.n:
        raise ValueError("patch_size exceeds the number of vertices")
    rng = rng_for(seed)
    patches: list[Patch] = []
    rejections = 0
    while len(patches) < count:
        k = int(rng.integers(signals.shape[0]))
        src = int(rng.integers(g.n))
        nodes = bfs_order(g, src, limit=patch_size)
        if len(nodes) < patch_size:
            rejections += 1
            if rejections > 100 * count:
                raise ValueError(f"no vertex has a {patch_size}-node BFS ball")
            continue
        idx = np.array(nodes)
        patches.append(Patch(idx, induced_subgraph(g, nodes), signals[k, idx], k))
    return patches


# -- persistence ---------------------------------------------------------------


def save_signals_csv(path, signals) -> None:
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(signals.shape[1])])
        for row in signals:
            w.writerow([f"{v:.17g}" for v in row])


def load_signals_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


def save_mask(path, mask: SamplingMask) -> None:
    Path(path).write_text(
        f"# N={mask.n}\n" + "".join(f"{i}\n" for i in mask.selected)
    )


def load_mask(path) -> SamplingMask:
    lines = Path(path).read_text().splitlines()
    n = int(lines[0].split("=")[1])
    return SamplingMask(np.array([int(v) for v in lines[1:] if v.strip()]), n)
