"""Sensor placement and fault zoning.

The decision variable is a partition of the fault columns of ``Mo`` into
``K`` zones with one sensor per zone.  The objective is ``sum_i G_ii^2`` with
``G = C (-A)^-1 E`` and ``E_i`` the sum of the zone's ``Mo`` columns; every
returned placement satisfies the rank isolability test.

With ``H = (-A)^-1 Mo`` the diagonal gain of zone ``i`` is
``G_ii = sum_{r in S_i} H[s_i, r]``, which is what the search evaluates.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .diagnosability import DiagnosabilityCertificate, _solve_neg_A, certify
from .thermal import Grid, selection_matrix

logger = logging.getLogger(__name__)

REL_TIE = 1e-12


class PlacementError(ValueError):
    pass


class PlacementInfeasible(PlacementError):
    def __init__(self, message: str, stats: dict | None = None):
        super().__init__(message)
        self.stats = stats or {}


@dataclass(frozen=True)
class Partition:
    """``zone_of_node[r]`` is the 1-based zone of fault column ``r + 1``;
    ``sensor_node[i]`` is the 1-based sensor node of zone ``i + 1``."""

    zone_of_node: tuple
    sensor_node: tuple

    def __post_init__(self):
        z = tuple(int(v) for v in self.zone_of_node)
        s = tuple(int(v) for v in self.sensor_node)
        object.__setattr__(self, "zone_of_node", z)
        object.__setattr__(self, "sensor_node", s)
        k = len(s)
        if k == 0:
            raise PlacementError("a partition needs at least one zone")
        if any(not 1 <= v <= k for v in z):
            raise PlacementError(f"zone labels must lie in 1..{k}")
        if set(z) != set(range(1, k + 1)):
            raise PlacementError("every zone must be non-empty")
        if len(set(s)) != k:
            raise PlacementError("sensor nodes must be distinct")

    @classmethod
    def from_zones(cls, zones, sensor_node, n_columns: int | None = None) -> "Partition":
        """Build from a list of 1-based node collections, checking cover and overlap."""
        zones = [sorted(int(r) for r in zone) for zone in zones]
        seen = {}
        for i, zone in enumerate(zones, start=1):
            if not zone:
                raise PlacementError(f"zone {i} is empty")
            for r in zone:
                if r in seen:
                    raise PlacementError(f"node {r} is in zones {seen[r]} and {i}")
                seen[r] = i
        n = max(seen) if n_columns is None else n_columns
        missing = sorted(set(range(1, n + 1)) - seen.keys())
        if missing:
            raise PlacementError(f"nodes not covered by any zone: {missing}")
        extra = sorted(r for r in seen if not 1 <= r <= n)
        if extra:
            raise PlacementError(f"nodes outside 1..{n}: {extra}")
        return cls(tuple(seen[r] for r in range(1, n + 1)), tuple(sensor_node))

    @property
    def K(self) -> int:
        return len(self.sensor_node)

    def zones(self) -> list[list[int]]:
        out = [[] for _ in range(self.K)]
        for r, z in enumerate(self.zone_of_node, start=1):
            out[z - 1].append(r)
        return out

    def signature(self) -> tuple:
        """Label-free form used for tie-breaking: sorted zones, then sensors in that order."""
        zones = self.zones()
        order = sorted(range(self.K), key=lambda i: zones[i])
        return tuple(tuple(zones[i]) for i in order), tuple(self.sensor_node[i] for i in order)

    def digest(self) -> str:
        return hashlib.sha1(repr(self.signature()).encode()).hexdigest()[:12]


def build_E(Mo, partition: Partition) -> np.ndarray:
    """Zonal fault map: ``E_i`` is the sum of the ``Mo`` columns in zone ``i``."""
    Mo = np.atleast_2d(np.asarray(Mo, dtype=float))
    if len(partition.zone_of_node) != Mo.shape[1]:
        raise PlacementError(
            f"partition covers {len(partition.zone_of_node)} columns, Mo has {Mo.shape[1]}"
        )
    z = np.asarray(partition.zone_of_node) - 1
    E = np.zeros((Mo.shape[0], partition.K))
    for i in range(partition.K):
        E[:, i] = Mo[:, z == i].sum(axis=1)
    return E


@dataclass
class SearchConfig:
    exhaustive_limit: int = 10
    restarts: int = 32
    seed: int = 0
    contiguous: bool = True
    record_candidates: bool = True


@dataclass
class PlacementResult:
    partition: Partition
    C: np.ndarray
    E: np.ndarray
    objective: float
    certificate: DiagnosabilityCertificate
    search_stats: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list)   # (digest, objective)

    @property
    def sensor_nodes(self) -> list[int]:
        return list(self.partition.sensor_node)

    def report(self, reference_nodes=None) -> str:
        st = self.search_stats
        lines = [
            "Placement report",
            "",
            f"zones K:               {self.partition.K}",
            f"search:                {st.get('method', '?')}"
            + (f" ({st['restarts']} restarts, seed {st['seed']})" if st.get("method") == "local" else ""),
            f"contiguous zones:      {'on' if st.get('contiguous') else 'off'}",
            f"candidates evaluated:  {st.get('candidates_evaluated', 0)}",
            f"wall time:             {st.get('wall_time', 0.0):.3f} s",
            f"objective sum G_ii^2:  {self.objective:.9e}",
            "",
        ]
        for i, zone in enumerate(self.partition.zones()):
            lines.append(f"zone {i + 1}: sensor at node {self.partition.sensor_node[i]}; "
                         f"nodes {', '.join(map(str, zone))}")
        if reference_nodes is not None:
            ref = sorted(int(v) for v in reference_nodes)
            got = sorted(self.sensor_nodes)
            lines += [
                "",
                "comparison with published sensor nodes:",
                f"  published: {', '.join(map(str, ref))}",
                f"  computed:  {', '.join(map(str, got))}",
                f"  match:     {'yes' if ref == got else 'no'}"
                " (not expected to match: density, h_o and depth are unpublished)",
            ]
        return "\n".join(lines) + "\n\n" + self.certificate.report()

    def write_candidates(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["partition_hash", "objective"])
            for digest, obj in self.candidates:
                w.writerow([digest, repr(float(obj))])


class _Problem:
    """Shared state for both search strategies."""

    def __init__(self, A, Mo, K, grid, config):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.Mo = np.atleast_2d(np.asarray(Mo, dtype=float))
        self.n = self.A.shape[0]
        self.F = self.Mo.shape[1]
        self.K = K
        self.H = _solve_neg_A(self.A, self.Mo)      # (N, F)
        self.per_node = self.F == self.n
        self.config = config
        self.contiguous = bool(config.contiguous and grid is not None and self.per_node)
        self.adj = None
        if self.contiguous:
            self.adj = [[v - 1 for v in grid.neighbors(r + 1)] for r in range(self.n)]
        self.evaluated = 0
        self.candidates = []
        self._feasible_cache = {}

    # objective -----------------------------------------------------------
    def zone_gain(self, members: np.ndarray, sensor: int) -> float:
        return float(self.H[sensor, members].sum())

    def objective(self, z: np.ndarray, sensors) -> float:
        self.evaluated += 1
        return float(sum(self.H[s, z == i].sum() ** 2 for i, s in enumerate(sensors)))

    def sensor_options(self, z, i):
        return np.flatnonzero(z == i) if self.per_node else np.arange(self.n)

    # feasibility ---------------------------------------------------------
    def partition(self, z, sensors) -> Partition:
        return Partition(tuple(int(v) + 1 for v in z), tuple(int(s) + 1 for s in sensors))

    def feasible(self, z, sensors) -> bool:
        key = (z.tobytes(), tuple(sensors))
        hit = self._feasible_cache.get(key)
        if hit is not None:
            return hit
        p = self.partition(z, sensors)
        E = build_E(self.Mo, p)
        C = selection_matrix(list(p.sensor_node), self.n)
        ok = len(set(sensors)) == len(sensors)
        if ok:
            CE = np.einsum("ij,ji->i", C, E)
            ok = bool(np.all(CE != 0))
        if ok:
            cert = certify(self.A, C, E)
            ok = cert.isolable and all(cert.detectable_per_fault)
        self._feasible_cache[key] = ok
        return ok

    def connected(self, members) -> bool:
        if not self.contiguous or len(members) <= 1:
            return True
        members = set(int(m) for m in members)
        start = next(iter(members))
        seen = {start}
        todo = deque([start])
        while todo:
            r = todo.popleft()
            for v in self.adj[r]:
                if v in members and v not in seen:
                    seen.add(v)
                    todo.append(v)
        return len(seen) == len(members)

    def record(self, z, sensors, obj):
        if self.config.record_candidates:
            self.candidates.append((self.partition(z, sensors).digest(), obj))


def _better(obj, key, best_obj, best_key) -> bool:
    """Higher objective wins; within REL_TIE, the smaller signature wins."""
    if best_obj is None:
        return True
    tol = REL_TIE * max(abs(obj), abs(best_obj), 1e-300)
    if obj > best_obj + tol:
        return True
    if obj < best_obj - tol:
        return False
    return key < best_key


def _set_partitions(n: int, k: int):
    """Restricted-growth strings of length ``n`` with exactly ``k`` blocks."""
    a = [0] * n

    def rec(i, m):
        if i == n:
            if m == k:
                yield np.array(a)
            return
        # remaining slots must still be able to open the missing blocks
        if k - m > n - i:
            return
        for v in range(min(m + 1, k)):
            a[i] = v
            yield from rec(i + 1, max(m, v + 1))

    if 1 <= k <= n:
        yield from rec(0, 0)


def _exhaustive(prob: _Problem):
    best = (None, None, None, None)   # obj, key, z, sensors
    for z in _set_partitions(prob.F, prob.K):
        if prob.contiguous and not all(prob.connected(np.flatnonzero(z == i)) for i in range(prob.K)):
            continue
        options = [prob.sensor_options(z, i) for i in range(prob.K)]
        for sensors in product(*options):
            if len(set(sensors)) < len(sensors):
                continue
            obj = prob.objective(z, sensors)
            prob.record(z, sensors, obj)
            if best[0] is not None and obj < best[0] * (1 - REL_TIE):
                continue
            key = prob.partition(z, sensors).signature()
            if _better(obj, key, best[0], best[1]) and prob.feasible(z, sensors):
                best = (obj, key, z.copy(), tuple(sensors))
    return best


def _random_start(prob: _Problem, rng) -> np.ndarray:
    n, K = prob.F, prob.K
    if prob.contiguous:
        # grow K regions from random seeds by random frontier expansion
        z = np.full(n, -1)
        seeds = rng.choice(n, size=K, replace=False)
        z[seeds] = np.arange(K)
        while np.any(z < 0):
            frontier = [(r, v) for r in range(n) if z[r] >= 0 for v in prob.adj[r] if z[v] < 0]
            r, v = frontier[rng.integers(len(frontier))]
            z[v] = z[r]
        return z
    z = rng.integers(K, size=n)
    z[rng.choice(n, size=K, replace=False)] = np.arange(K)
    return z


def _best_sensors(prob: _Problem, z, sensors=None, zones=None) -> list[int]:
    """Best sensor per zone; only ``zones`` are re-chosen when ``sensors`` is given."""
    out = list(sensors) if sensors is not None else [-1] * prob.K
    for i in (range(prob.K) if zones is None else zones):
        members = np.flatnonzero(z == i)
        taken = {s for j, s in enumerate(out) if j != i}
        opts = [int(s) for s in prob.sensor_options(z, i) if s not in taken]
        vals = [prob.H[s, members].sum() ** 2 for s in opts]
        out[i] = opts[int(np.argmax(vals))]
    return out


def _local(prob: _Problem, rng):
    """Best-improvement descent from a random start.

    Moves reassign one fault column to another zone (the two affected zones
    then take their best sensors) or relocate one sensor within its zone.
    """
    z = _random_start(prob, rng)
    sensors = _best_sensors(prob, z)
    obj = prob.objective(z, sensors)
    if not prob.feasible(z, sensors):
        return None
    while True:
        moves = []
        for r in range(prob.F):
            src = z[r]
            if np.sum(z == src) == 1:
                continue
            for dst in range(prob.K):
                if dst == src:
                    continue
                z2 = z.copy()
                z2[r] = dst
                if prob.contiguous and not (prob.connected(np.flatnonzero(z2 == src))
                                            and prob.connected(np.flatnonzero(z2 == dst))):
                    continue
                s2 = _best_sensors(prob, z2, sensors, (src, dst))
                moves.append((prob.objective(z2, s2), z2, s2))
        for i in range(prob.K):
            for s in prob.sensor_options(z, i):
                if s == sensors[i] or s in sensors:
                    continue
                s2 = list(sensors)
                s2[i] = int(s)
                moves.append((prob.objective(z, s2), z, s2))
        for m_obj, m_z, m_s in moves:
            prob.record(m_z, m_s, m_obj)
        moves.sort(key=lambda m: -m[0])
        step = None
        for m_obj, m_z, m_s in moves:
            if m_obj <= obj * (1 + REL_TIE):
                break
            if prob.feasible(m_z, m_s):
                step = (m_obj, m_z, m_s)
                break
        if step is None:
            return obj, prob.partition(z, sensors).signature(), z, tuple(sensors)
        obj, z, sensors = step


def optimize_placement(A, Mo, K: int, config: SearchConfig | None = None,
                       grid: Grid | None = None) -> PlacementResult:
    """Maximize ``sum_i G_ii^2`` over zonings of ``Mo``'s columns and sensor choices.

    Exhaustive when the number of fault columns is at most
    ``config.exhaustive_limit``, otherwise a seeded multi-start local search.
    ``grid`` enables the contiguity constraint for per-node fault maps.
    """
    config = config or SearchConfig()
    Mo = np.atleast_2d(np.asarray(Mo, dtype=float))
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise PlacementError("K must be an integer >= 1")
    if K > Mo.shape[1]:
        raise PlacementError(f"K = {K} exceeds the {Mo.shape[1]} fault columns of Mo")
    if not np.any(Mo):
        raise PlacementError("Mo is zero")
    t0 = time.perf_counter()
    prob = _Problem(A, Mo, K, grid, config)
    if prob.F <= config.exhaustive_limit:
        method = "exhaustive"
        best = _exhaustive(prob)
    else:
        method = "local"
        rng = np.random.default_rng(config.seed)
        best = (None, None, None, None)
        for _ in range(config.restarts):
            res = _local(prob, rng)
            if res is not None and _better(res[0], res[1], best[0], best[1]):
                best = res
    stats = {
        "method": method,
        "candidates_evaluated": prob.evaluated,
        "wall_time": time.perf_counter() - t0,
        "restarts": config.restarts if method == "local" else 0,
        "seed": config.seed,
        "contiguous": prob.contiguous,
    }
    if best[0] is None:
        raise PlacementInfeasible(
            f"no placement with K = {K} satisfies the isolability rank condition", stats)
    _, _, z, sensors = best
    partition = prob.partition(z, sensors)
    return _result(prob.A, prob.Mo, partition, stats, prob.candidates)


def _result(A, Mo, partition, stats, candidates) -> PlacementResult:
    n = A.shape[0]
    E = build_E(Mo, partition)
    C = selection_matrix(list(partition.sensor_node), n)
    cert = certify(A, C, E, sensor_nodes=partition.sensor_node)
    objective = float(np.sum(np.diag(cert.gain) ** 2))
    return PlacementResult(partition, C, E, objective, cert, stats, candidates)


def evaluate_partition(A, Mo, partition: Partition) -> PlacementResult:
    """Score a given partition without searching (e.g. a published placement)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    stats = {"method": "fixed", "candidates_evaluated": 1, "wall_time": 0.0, "contiguous": False}
    return _result(A, np.atleast_2d(np.asarray(Mo, dtype=float)), partition, stats, [])


def optimize_single_sensor(A, Mo) -> PlacementResult:
    """Best single sensor for ``E = sum_r Mo_r``: exhaustive over all nodes."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Mo = np.atleast_2d(np.asarray(Mo, dtype=float))
    if not np.any(Mo):
        raise PlacementError("Mo is zero")
    t0 = time.perf_counter()
    e = Mo.sum(axis=1)
    g = _solve_neg_A(A, e)                  # gain for every candidate sensor
    vals = g ** 2
    order = np.argsort(-vals, kind="stable")   # ties -> smallest node
    stats = {"method": "exhaustive", "candidates_evaluated": A.shape[0],
             "wall_time": 0.0, "contiguous": False, "seed": 0, "restarts": 0}
    z = tuple([1] * Mo.shape[1])
    candidates = [(Partition(z, (s + 1,)).digest(), float(vals[s])) for s in range(A.shape[0])]
    for s in order:
        if vals[s] <= 0:
            break
        partition = Partition(z, (int(s) + 1,))
        res = _result(A, Mo, partition, stats, candidates)
        if res.certificate.isolable and all(res.certificate.detectable_per_fault):
            stats["wall_time"] = time.perf_counter() - t0
            return res
    raise PlacementInfeasible("every sensor position has zero fault gain", stats)


def nearest_sensor_partition(grid: Grid, sensors) -> Partition:
    """Assign every node to its closest sensor (grid index distance, ties to the lower zone)."""
    pos = np.array([grid.position(r) for r in range(1, grid.node_count + 1)], dtype=float)
    spos = pos[np.asarray(sensors) - 1]
    d = ((pos[:, None, :] - spos[None, :, :]) ** 2).sum(axis=2)
    return Partition(tuple(int(v) + 1 for v in np.argmin(d, axis=1)), tuple(sensors))
