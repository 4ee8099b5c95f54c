"""Radial distribution network model: loading, validation, admittance, device limits.

Conventions: all quantities are per-unit on a single base. Node 0 is the
substation (slack) bus held at voltage magnitude ``v0``; every other node is a
PQ bus whose net injection is specified (loads carry negative sign). The line
graph must be a spanning tree rooted at node 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class NetworkError(ValueError):
    """A network file or model failed validation. Message names the offender."""


class ProjectionError(RuntimeError):
    """Alternating projection failed to reach tolerance (tolerance too tight)."""


@dataclass(frozen=True)
class Node:
    """A bus. ``p0``/``q0`` are nominal injections (negative for loads);
    ``shunt`` is the self admittance to ground."""

    id: int
    p0: float = 0.0
    q0: float = 0.0
    shunt: complex = 0j


@dataclass(frozen=True)
class Line:
    """A branch with series impedance ``z``, oriented away from the substation."""

    from_bus: int
    to_bus: int
    z: complex

    @property
    def y(self) -> complex:
        return 1.0 / self.z


@dataclass(frozen=True)
class FeasibleSet:
    """Injection limits for one node: a (p, q) box, optionally intersected with
    an origin-centered apparent-power disk of radius ``s_max``."""

    p_min: float
    p_max: float
    q_min: float
    q_max: float
    s_max: float | None = None

    def contains(self, p: float, q: float, tol: float = 0.0) -> bool:
        if p < self.p_min - tol or p > self.p_max + tol:
            return False
        if q < self.q_min - tol or q > self.q_max + tol:
            return False
        if self.s_max is not None and math.hypot(p, q) > self.s_max + tol:
            return False
        return True


@dataclass(frozen=True)
class NetworkModel:
    """Immutable radial network. ``nodes`` includes the slack (id 0);
    ``feasible[i]`` bounds node ``i + 1``. Safe to share across trials."""

    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    v0: float
    feasible: tuple[FeasibleSet, ...]

    # Derived structure below is cached; ids are contiguous so node i maps to
    # array index i - 1.

    @cached_property
    def n(self) -> int:
        return len(self.nodes) - 1

    @cached_property
    def p0(self) -> np.ndarray:
        return _freeze(np.array([nd.p0 for nd in self.nodes[1:]], dtype=float))

    @cached_property
    def q0(self) -> np.ndarray:
        return _freeze(np.array([nd.q0 for nd in self.nodes[1:]], dtype=float))

    @cached_property
    def shunts(self) -> np.ndarray:
        return _freeze(np.array([nd.shunt for nd in self.nodes[1:]], dtype=complex))

    @cached_property
    def parent(self) -> np.ndarray:
        """parent[i] = id of the upstream node of node i+1 (0 = substation)."""
        par = np.zeros(self.n, dtype=int)
        for ln in self.lines:
            par[ln.to_bus - 1] = ln.from_bus
        return _freeze(par)

    @cached_property
    def branch_z(self) -> np.ndarray:
        """branch_z[i] = impedance of the line feeding node i+1."""
        z = np.zeros(self.n, dtype=complex)
        for ln in self.lines:
            z[ln.to_bus - 1] = ln.z
        return _freeze(z)

    @cached_property
    def depth(self) -> np.ndarray:
        """depth[i] = number of lines between the substation and node i+1."""
        d = np.zeros(self.n, dtype=int)
        for i in self._bfs_order:
            p = self.parent[i]
            d[i] = 1 if p == 0 else d[p - 1] + 1
        return _freeze(d)

    @cached_property
    def _bfs_order(self) -> np.ndarray:
        """Non-slack node indices sorted parents-before-children."""
        children: dict[int, list[int]] = {i: [] for i in range(self.n + 1)}
        for ln in self.lines:
            children[ln.from_bus].append(ln.to_bus)
        order: list[int] = []
        queue = [0]
        while queue:
            nxt: list[int] = []
            for nid in queue:
                for c in children[nid]:
                    order.append(c - 1)
                    nxt.append(c)
            queue = nxt
        return _freeze(np.array(order, dtype=int))

    @cached_property
    def _levels(self) -> tuple[np.ndarray, ...]:
        """Node indices grouped by depth, shallowest first."""
        d = self.depth
        return tuple(
            _freeze(np.flatnonzero(d == lev)) for lev in range(1, int(d.max()) + 1)
        )

    @cached_property
    def _dfs_span(self) -> tuple[np.ndarray, np.ndarray]:
        """DFS preorder slot and subtree end slot per non-slack node, so the
        subtree of node i+1 occupies slots [pos[i], end[i])."""
        children: dict[int, list[int]] = {i: [] for i in range(self.n + 1)}
        for ln in self.lines:
            children[ln.from_bus].append(ln.to_bus)
        pos = np.zeros(self.n, dtype=int)
        end = np.zeros(self.n, dtype=int)
        slot = 0
        stack = [(c, False) for c in reversed(children[0])]
        while stack:
            nid, closing = stack.pop()
            if closing:
                end[nid - 1] = slot
                continue
            pos[nid - 1] = slot
            slot += 1
            stack.append((nid, True))
            for c in reversed(children[nid]):
                stack.append((c, False))
        return _freeze(pos), _freeze(end)

    @cached_property
    def box(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (p_min, p_max, q_min, q_max, s_max) arrays; s_max = inf if absent."""
        fs = self.feasible
        pmin = np.array([f.p_min for f in fs])
        pmax = np.array([f.p_max for f in fs])
        qmin = np.array([f.q_min for f in fs])
        qmax = np.array([f.q_max for f in fs])
        smax = np.array([math.inf if f.s_max is None else f.s_max for f in fs])
        return tuple(_freeze(a) for a in (pmin, pmax, qmin, qmax, smax))  # type: ignore[return-value]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Loading


def load_network(path: str | Path, format: str | None = None) -> NetworkModel:
    """Load and validate a network from a JSON file or a buses/branches CSV pair.

    ``format`` is "json" or "csv-pair"; by default it is inferred (a directory
    or a ``*.csv`` path selects the CSV pair). Raises :class:`NetworkError`
    naming the offending entity on any validation failure.
    """
    path = Path(path)
    if format is None:
        format = "csv-pair" if path.is_dir() or path.suffix == ".csv" else "json"
    if format == "json":
        return _load_json(path)
    if format == "csv-pair":
        return _load_csv_pair(path)
    raise NetworkError(f"unknown network format {format!r}")


def _load_json(path: Path) -> NetworkModel:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise NetworkError(f"cannot parse network file {path}: {exc}") from exc
    try:
        v0 = float(raw.get("v0", 1.0))
        nodes = [
            dict(
                id=int(nd["id"]),
                p0=float(nd.get("p0", 0.0)),
                q0=float(nd.get("q0", 0.0)),
                shunt=complex(float(nd.get("shunt_g", 0.0)), float(nd.get("shunt_b", 0.0))),
                pmin=nd.get("pmin"),
                pmax=nd.get("pmax"),
                qmin=nd.get("qmin"),
                qmax=nd.get("qmax"),
                smax=nd.get("smax"),
            )
            for nd in raw["nodes"]
        ]
        lines = [
            (int(ln["from"]), int(ln["to"]), float(ln["r"]), float(ln["x"]))
            for ln in raw["lines"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network file {path}: {exc}") from exc
    return build_network(v0, nodes, lines)


def _load_csv_pair(path: Path) -> NetworkModel:
    """CSV pair: ``buses.csv`` (id,p0,q0,pmin,pmax,qmin,qmax,smax) and
    ``branches.csv`` (from,to,r,x). v0 defaults to 1.0 and shunts to zero."""
    base = path if path.is_dir() else path.parent
    bus_path, br_path = base / "buses.csv", base / "branches.csv"
    for p in (bus_path, br_path):
        if not p.exists():
            raise NetworkError(f"missing CSV file {p}")

    def _opt(row: dict, key: str) -> float | None:
        val = row.get(key, "")
        return None if val in ("", None) else float(val)

    try:
        with open(bus_path, newline="") as fh:
            nodes = [
                dict(
                    id=int(row["id"]),
                    p0=float(row.get("p0") or 0.0),
                    q0=float(row.get("q0") or 0.0),
                    shunt=0j,
                    pmin=_opt(row, "pmin"),
                    pmax=_opt(row, "pmax"),
                    qmin=_opt(row, "qmin"),
                    qmax=_opt(row, "qmax"),
                    smax=_opt(row, "smax"),
                )
                for row in csv.DictReader(fh)
            ]
        with open(br_path, newline="") as fh:
            lines = [
                (int(row["from"]), int(row["to"]), float(row["r"]), float(row["x"]))
                for row in csv.DictReader(fh)
            ]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed CSV network at {base}: {exc}") from exc
    return build_network(1.0, nodes, lines)


def build_network(
    v0: float,
    node_rows: list[dict],
    line_rows: list[tuple[int, int, float, float]],
) -> NetworkModel:
    """Assemble and validate a NetworkModel from parsed rows.

    Line orientation is normalized to point away from the substation; a node
    without explicit bounds gets the degenerate box fixing it at (p0, q0).
    """
    ids = [nd["id"] for nd in node_rows]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError(f"duplicate node id(s): {dup}")
    if 0 not in ids:
        raise NetworkError("node 0 (substation) is missing")
    n = len(ids) - 1
    if n < 1:
        raise NetworkError("network needs at least one non-slack node")
    if sorted(ids) != list(range(n + 1)):
        raise NetworkError(f"node ids must be contiguous 0..{n}, got {sorted(ids)}")
    if not (v0 > 0.0 and math.isfinite(v0)):
        raise NetworkError(f"slack voltage v0 must be positive and finite, got {v0}")

    by_id = {nd["id"]: nd for nd in node_rows}
    for nd in node_rows:
        if not (math.isfinite(nd["p0"]) and math.isfinite(nd["q0"])):
            raise NetworkError(f"node {nd['id']}: p0/q0 must be finite")

    # Validate lines and build adjacency for orientation.
    adjacency: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n + 1)}
    for k, (a, b, r, x) in enumerate(line_rows):
        for endpoint in (a, b):
            if endpoint not in by_id:
                raise NetworkError(
                    f"dangling line endpoint: line {k} ({a} -> {b}) references unknown node {endpoint}"
                )
        if a == b:
            raise NetworkError(f"non-radial topology: line {k} is a self-loop at node {a}")
        if r < 0.0:
            raise NetworkError(f"line {k} ({a} -> {b}): negative resistance {r}")
        if math.hypot(r, x) == 0.0:
            raise NetworkError(f"line {k} ({a} -> {b}): zero impedance")
        adjacency[a].append((b, k))
        adjacency[b].append((a, k))

    if len(line_rows) != n:
        raise NetworkError(
            f"non-radial topology: {len(line_rows)} lines for {n} non-slack nodes "
            f"(a spanning tree needs exactly {n})"
        )

    # BFS from the substation, orienting each line away from it.
    oriented: dict[int, Line] = {}
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v, k in adjacency[u]:
                if v in seen:
                    continue
                seen.add(v)
                a, b, r, x = line_rows[k]
                oriented[k] = Line(from_bus=u, to_bus=v, z=complex(r, x))
                nxt.append(v)
        frontier = nxt
    if len(seen) != n + 1:
        missing = sorted(set(range(n + 1)) - seen)
        raise NetworkError(f"non-radial topology: node(s) {missing} unreachable from the substation")
    if len(oriented) != len(line_rows):
        extra = sorted(set(range(len(line_rows))) - set(oriented))
        k = extra[0]
        a, b, *_ = line_rows[k]
        raise NetworkError(f"non-radial topology: line {k} ({a} -> {b}) closes a cycle")

    feasible = []
    for i in range(1, n + 1):
        nd = by_id[i]
        fs = FeasibleSet(
            p_min=nd["p0"] if nd.get("pmin") is None else float(nd["pmin"]),
            p_max=nd["p0"] if nd.get("pmax") is None else float(nd["pmax"]),
            q_min=nd["q0"] if nd.get("qmin") is None else float(nd["qmin"]),
            q_max=nd["q0"] if nd.get("qmax") is None else float(nd["qmax"]),
            s_max=None if nd.get("smax") is None else float(nd["smax"]),
        )
        _check_feasible_set(fs, i)
        feasible.append(fs)

    nodes = tuple(
        Node(id=i, p0=by_id[i]["p0"], q0=by_id[i]["q0"], shunt=by_id[i]["shunt"])
        for i in range(n + 1)
    )
    lines = tuple(oriented[k] for k in sorted(oriented))
    return NetworkModel(nodes=nodes, lines=lines, v0=v0, feasible=tuple(feasible))


def _check_feasible_set(fs: FeasibleSet, node_id: int) -> None:
    if fs.p_min > fs.p_max:
        raise NetworkError(
            f"empty feasible set at node {node_id}: p_min {fs.p_min} > p_max {fs.p_max}"
        )
    if fs.q_min > fs.q_max:
        raise NetworkError(
            f"empty feasible set at node {node_id}: q_min {fs.q_min} > q_max {fs.q_max}"
        )
    if fs.s_max is not None:
        if not fs.s_max > 0.0:
            raise NetworkError(f"node {node_id}: s_max must be positive, got {fs.s_max}")
        # Nearest box point to the origin must lie inside the disk.
        p_near = min(max(0.0, fs.p_min), fs.p_max)
        q_near = min(max(0.0, fs.q_min), fs.q_max)
        if math.hypot(p_near, q_near) > fs.s_max:
            raise NetworkError(
                f"empty feasible set at node {node_id}: box and s_max={fs.s_max} disk are disjoint"
            )


def scale_injections(net: NetworkModel, factor: float) -> NetworkModel:
    """A copy of the network with nominal injections and device boxes scaled.

    Used to stress a feeder (for example to force an under-voltage profile)
    while keeping curtailment ranges proportional to the loads.
    """
    if factor <= 0:
        raise ValueError("load scale must be positive")
    if factor == 1.0:
        return net
    nodes = tuple(
        Node(id=nd.id, p0=factor * nd.p0, q0=factor * nd.q0, shunt=nd.shunt)
        for nd in net.nodes
    )
    feasible = tuple(
        FeasibleSet(
            p_min=factor * fs.p_min,
            p_max=factor * fs.p_max,
            q_min=factor * fs.q_min,
            q_max=factor * fs.q_max,
            s_max=None if fs.s_max is None else factor * fs.s_max,
        )
        for fs in net.feasible
    )
    return NetworkModel(nodes=nodes, lines=net.lines, v0=net.v0, feasible=feasible)


def path_sum_matrix(net: NetworkModel, weights: np.ndarray) -> np.ndarray:
    """N x N matrix of branch-weight sums over common substation paths.

    Entry (i, j) sums ``weights[k]`` over every branch k lying on both the
    substation-to-(i+1) and substation-to-(j+1) paths. With branch resistances
    as weights this is the common-path resistance matrix of a radial feeder.
    """
    n = net.n
    pos, end = net._dfs_span
    parent = net.parent
    m = np.zeros((n, n), dtype=np.asarray(weights).dtype)
    for i in net._bfs_order:
        pid = parent[i]
        if pid > 0:
            m[i, :] = m[pid - 1, :]
        m[i, pos[i] : end[i]] += weights[i]
    return m[:, pos]


# ---------------------------------------------------------------------------
# Admittance


def build_admittance(net: NetworkModel) -> tuple[sp.csr_matrix, np.ndarray, complex]:
    """Build the bus admittance partition (Y, y_bar, y00).

    Y is the N x N block over non-slack nodes with Y_ii = sum of incident line
    admittances plus the node's shunt and Y_ij = -y_ij for lines; y_bar is the
    slack coupling column and y00 the slack self-admittance, so that
    [I0; i] = [[y00, y_bar^T]; [y_bar, Y]] [V0; v].
    """
    n = net.n
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    y_bar = np.zeros(n, dtype=complex)
    y00 = complex(net.nodes[0].shunt)
    diag = np.array([complex(nd.shunt) for nd in net.nodes[1:]])
    for ln in net.lines:
        y = ln.y
        a, b = ln.from_bus, ln.to_bus
        if a == 0:
            y00 += y
            y_bar[b - 1] += -y
            diag[b - 1] += y
        else:
            diag[a - 1] += y
            diag[b - 1] += y
            rows += [a - 1, b - 1]
            cols += [b - 1, a - 1]
            vals += [-y, -y]
    rows += list(range(n))
    cols += list(range(n))
    vals += list(diag)
    Y = sp.csr_matrix(
        (np.array(vals, dtype=complex), (np.array(rows), np.array(cols))), shape=(n, n)
    )
    return Y, y_bar, y00


# ---------------------------------------------------------------------------
# Feasible-set projection


def project_feasible(
    p: float,
    q: float,
    fs: FeasibleSet,
    tol: float = 1e-12,
) -> tuple[float, float]:
    """Euclidean projection of (p, q) onto the node's box (intersected with the
    apparent-power disk when ``s_max`` is set).

    Box-only sets use the closed-form clamp. With a disk, the exact projection
    is found by enumerating the KKT active-set patterns of the 2-D problem.
    Points already feasible within ``tol`` are returned unchanged, so the
    projection is exactly idempotent.
    """
    pa = np.array([p], dtype=float)
    qa = np.array([q], dtype=float)
    pmin = np.array([fs.p_min])
    pmax = np.array([fs.p_max])
    qmin = np.array([fs.q_min])
    qmax = np.array([fs.q_max])
    smax = np.array([math.inf if fs.s_max is None else fs.s_max])
    pp, qq = project_box_disk(pa, qa, pmin, pmax, qmin, qmax, smax, tol)
    return float(pp[0]), float(qq[0])


def project_feasible_net(
    p: np.ndarray, q: np.ndarray, net: NetworkModel, tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Node-wise projection of injection vectors onto the network's feasible sets."""
    pmin, pmax, qmin, qmax, smax = net.box
    return project_box_disk(p, q, pmin, pmax, qmin, qmax, smax, tol)


def project_box_disk(
    p: np.ndarray,
    q: np.ndarray,
    pmin: np.ndarray,
    pmax: np.ndarray,
    qmin: np.ndarray,
    qmax: np.ndarray,
    smax: np.ndarray,
    tol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection onto box intersect origin-centered disk, per entry."""
    pc = np.clip(p, pmin, pmax)
    qc = np.clip(q, qmin, qmax)
    if not np.isfinite(smax).any():
        return pc, qc

    # Already feasible within tol: return unchanged (exact idempotency).
    rad = np.hypot(p, q)
    feasible = (
        (p >= pmin - tol)
        & (p <= pmax + tol)
        & (q >= qmin - tol)
        & (q <= qmax + tol)
        & (rad <= smax + tol)
    )
    # Box projection already inside the disk is the answer (intersection is a
    # subset of the box, so no intersection point can be closer).
    clamp_ok = np.hypot(pc, qc) <= smax
    done = feasible | clamp_ok
    out_p = np.where(feasible, p, pc)
    out_q = np.where(feasible, q, qc)
    if done.all():
        return out_p, out_q

    idx = np.flatnonzero(~done)
    pd, qd = _project_mixed_active(
        p[idx], q[idx], pmin[idx], pmax[idx], qmin[idx], qmax[idx], smax[idx]
    )
    out_p = out_p.copy()
    out_q = out_q.copy()
    out_p[idx] = pd
    out_q[idx] = qd
    return out_p, out_q


def _project_mixed_active(p, q, pmin, pmax, qmin, qmax, smax):
    """Exact projection when box clamp and disk scaling both fail.

    The optimum's active set is one of a handful of patterns, so every
    pattern's closed form is evaluated and the nearest feasible point wins:
    the box clamp, radial disk scaling, and each point where the disk arc
    crosses one box bound.
    """
    slack = 1e-12
    cand_p = [np.clip(p, pmin, pmax)]
    cand_q = [np.clip(q, qmin, qmax)]
    rad = np.maximum(np.hypot(p, q), 1e-300)
    scale = np.minimum(1.0, smax / rad)
    cand_p.append(p * scale)
    cand_q.append(q * scale)
    for pb in (pmin, pmax):
        arc = np.sqrt(np.maximum(smax**2 - pb**2, 0.0))
        for sign in (1.0, -1.0):
            cand_p.append(pb)
            cand_q.append(sign * arc)
    for qb in (qmin, qmax):
        arc = np.sqrt(np.maximum(smax**2 - qb**2, 0.0))
        for sign in (1.0, -1.0):
            cand_p.append(sign * arc)
            cand_q.append(qb)
    cp = np.stack(np.broadcast_arrays(*cand_p)).astype(float)
    cq = np.stack(np.broadcast_arrays(*cand_q)).astype(float)
    feasible = (
        (cp >= pmin - slack)
        & (cp <= pmax + slack)
        & (cq >= qmin - slack)
        & (cq <= qmax + slack)
        & (np.hypot(cp, cq) <= smax + slack)
    )
    dist = np.where(feasible, (cp - p) ** 2 + (cq - q) ** 2, np.inf)
    best = dist.argmin(axis=0)
    cols = np.arange(cp.shape[1])
    if not np.isfinite(dist[best, cols]).all():
        raise ProjectionError("no feasible projection candidate; feasible set empty?")
    return cp[best, cols], cq[best, cols]
