"""Sensor-network temperature data in the Intel Berkeley lab text layout.

Readings rows look like ``date time epoch moteid temperature humidity light
voltage`` (whitespace or comma separated); coordinate rows are ``moteid x y``.
A timestamp (epoch) yields one graph signal when every node reported a
finite temperature for it.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, build_rbf_graph
from .signals import rng_for

_POLICY = re.compile(r"^first-(\d+)-complete$")


class SensorDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SensorDataset:
    graph: Graph
    signals: np.ndarray        # (K, N), one row per selected epoch
    node_ids: tuple            # original mote id of each graph vertex
    epochs: tuple              # epoch of each signal row

    @property
    def n(self) -> int:
        return self.graph.n


def _fields(line: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", line.strip()) if t]


def _read_coords(path) -> dict[int, tuple[float, float]]:
    coords = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tok = _fields(line)
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) < 3:
            raise SensorDataError(f"{path}:{lineno}: expected 'id x y'")
        coords[int(tok[0])] = (float(tok[1]), float(tok[2]))
    if not coords:
        raise SensorDataError(f"{path}: no coordinates")
    return coords


def _parse_policy(policy: str) -> int | None:
    if policy == "all-complete":
        return None
    m = _POLICY.match(policy)
    if not m or int(m.group(1)) < 1:
        raise ValueError(
            f"unknown timestamp policy {policy!r}; use 'first-<K>-complete' or 'all-complete'"
        )
    return int(m.group(1))


def ingest_sensor_dataset(
    readings_path,
    coords_path,
    timestamp_policy: str = "first-500-complete",
    kernel_width: float = 0.5,
    edge_threshold: float = 0.75,
    normalize_coords: bool = True,
) -> SensorDataset:
    """Build the sensor graph and one temperature signal per complete epoch.

    Mote ids are mapped to vertices 0..N-1 in ascending id order. With
    ``normalize_coords`` the positions are shifted and divided by their
    largest coordinate range so the synthetic kernel defaults apply. Epochs
    are taken in ascending order; ``first-K-complete`` keeps the first K
    epochs with full coverage. A reading with a missing or non-finite
    temperature disqualifies its epoch; repeated (epoch, mote) rows keep the
    first value.
    """
    limit = _parse_policy(timestamp_policy)
    coords = _read_coords(coords_path)
    ids = sorted(coords)
    index = {mote: i for i, mote in enumerate(ids)}
    n = len(ids)

    values: dict[int, dict[int, float]] = {}
    spoiled: set[int] = set()
    for lineno, line in enumerate(Path(readings_path).read_text().splitlines(), 1):
        tok = _fields(line)
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) < 4:
            raise SensorDataError(f"{readings_path}:{lineno}: too few fields")
        epoch, mote = int(tok[2]), int(tok[3])
        if mote not in index:
            raise SensorDataError(f"{readings_path}:{lineno}: unknown node id {mote}")
        try:
            temp = float(tok[4])
        except (IndexError, ValueError):
            temp = float("nan")
        if not np.isfinite(temp):
            spoiled.add(epoch)
            continue
        values.setdefault(epoch, {}).setdefault(index[mote], temp)

    complete = [e for e in sorted(values) if e not in spoiled and len(values[e]) == n]
    if not complete:
        hist = Counter(len(v) for e, v in values.items() if e not in spoiled)
        detail = ", ".join(f"{k} nodes: {c}" for k, c in sorted(hist.items())) or "no readings"
        raise SensorDataError(f"no timestamp covers all {n} nodes (coverage histogram: {detail})")
    if limit is not None:
        complete = complete[:limit]

    signals = np.array([[values[e][i] for i in range(n)] for e in complete])
    xy = np.array([coords[m] for m in ids], dtype=float)
    if normalize_coords:
        xy = xy - xy.min(axis=0)
        span = xy.max()
        if span > 0:
            xy = xy / span
    g = build_rbf_graph(xy, kernel_width, edge_threshold)
    return SensorDataset(g, signals, tuple(ids), tuple(complete))


def write_sensor_fixture(
    readings_path,
    coords_path,
    n_nodes: int = 54,
    n_epochs: int = 1000,
    drop_rate: float = 0.01,
    seed=0,
) -> None:
    """Write a synthetic dataset in the same layout as the lab recordings.

    Temperatures are a smooth spatial field (a few random bumps over a
    40 m x 30 m floor) plus a slow daily cycle and sensor noise. Each reading
    is omitted with probability ``drop_rate`` and mote ids start at 1, as in
    the original files.
    """
    rng = rng_for(seed)
    xy = rng.uniform((0.0, 0.0), (40.0, 30.0), size=(n_nodes, 2))
    centers = rng.uniform((0.0, 0.0), (40.0, 30.0), size=(4, 2))
    amps = rng.normal(0.0, 2.0, size=4)
    d2 = ((xy[:, None, :] - centers[None]) ** 2).sum(-1)
    field = (amps * np.exp(-d2 / (2 * 8.0**2))).sum(axis=1)
    with open(coords_path, "w") as fh:
        for i, (x, y) in enumerate(xy, 1):
            fh.write(f"{i} {x:.2f} {y:.2f}\n")
    with open(readings_path, "w") as fh:
        for epoch in range(1, n_epochs + 1):
            minutes = epoch // 2
            stamp = f"2004-02-28 {minutes // 60 % 24:02d}:{minutes % 60:02d}:00.000000"
            cycle = 3.0 * np.sin(2 * np.pi * epoch / 2880.0)
            gain = rng.normal(1.0, 0.3)
            temps = 20.0 + cycle + gain * field + rng.normal(0.0, 0.1, n_nodes)
            keep = rng.random(n_nodes) >= drop_rate
            for i in np.flatnonzero(keep):
                fh.write(f"{stamp} {epoch} {i + 1} {temps[i]:.4f} 37.0 45.0 2.68\n")
