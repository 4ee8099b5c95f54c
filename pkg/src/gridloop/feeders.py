"""Bundled and synthetic test feeders."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .netmodel import NetworkModel, build_network, load_network

_BUILTIN = ("ieee33",)


def builtin_network_path(name: str) -> Path:
    """Filesystem path of a bundled network file."""
    if name not in _BUILTIN:
        raise KeyError(f"unknown builtin network {name!r}; available: {_BUILTIN}")
    return Path(str(resources.files("gridloop") / "data" / f"{name}.json"))


def resolve_network(name_or_path: str | Path) -> Path:
    """Map a builtin alias (e.g. "ieee33") or a filesystem path to a file path."""
    name = str(name_or_path)
    if name in _BUILTIN:
        return builtin_network_path(name)
    return Path(name_or_path)


def ieee33() -> NetworkModel:
    """The 33-bus radial test feeder (12.66 kV, 1 MVA base), loads as negative
    injections, each node able to curtail up to half of its nominal load."""
    return load_network(builtin_network_path("ieee33"))


def synthetic_feeder(
    n: int,
    seed: int = 0,
    avg_load: float = 0.00125,
    curtail: float = 0.5,
) -> NetworkModel:
    """Random radial feeder with ``n`` non-slack nodes for scale tests.

    Parents are drawn from a sliding window of recently added nodes, which
    keeps the tree depth near 2n/window. Loads are uniform around ``avg_load``
    per-unit at ~0.9 power factor; boxes allow shedding ``curtail`` of each
    load.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    window = max(2, n // 20)
    nodes = [dict(id=0, p0=0.0, q0=0.0, shunt=0j)]
    lines = []
    for i in range(1, n + 1):
        parent = 0 if i == 1 else int(rng.integers(max(0, i - window), i))
        r = float(rng.uniform(1e-4, 4e-4))
        x = r * float(rng.uniform(0.8, 1.5))
        lines.append((parent, i, r, x))
        pload = avg_load * float(rng.uniform(0.5, 1.5))
        qload = pload * float(rng.uniform(0.3, 0.6))
        nodes.append(
            dict(
                id=i,
                p0=-pload,
                q0=-qload,
                shunt=0j,
                pmin=-pload,
                pmax=-(1.0 - curtail) * pload,
                qmin=-qload,
                qmax=-(1.0 - curtail) * qload,
                smax=None,
            )
        )
    return build_network(1.0, nodes, lines)
