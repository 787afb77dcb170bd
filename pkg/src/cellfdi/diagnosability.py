"""Steady-state fault gains and detectability/isolability certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DiagnosabilityError(ValueError):
    pass


def _as2d(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None] if name == "E" else M[None, :]
    return M


def _solve_neg_A(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """``(-A)^-1 rhs``, with an error naming the eigenvalue nearest zero."""
    eig = np.linalg.eigvals(A)
    worst = eig[np.argmin(np.abs(eig))]
    scale = max(1.0, float(np.max(np.abs(eig))))
    if abs(worst) <= 1e-13 * scale:
        raise DiagnosabilityError(f"A is singular: eigenvalue {worst:.3g} at zero")
    try:
        return np.linalg.solve(-A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DiagnosabilityError(f"A is singular: eigenvalue {worst:.3g} at zero") from exc


def steady_state_gain(A, C, E) -> np.ndarray:
    """Fault-to-output steady-state gain ``G = C (-A)^-1 E``.

    Examples
    --------
    >>> steady_state_gain([[-2.0]], [[1.0]], [[3.0]])
    array([[1.5]])
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C, E = _as2d(C, "C"), _as2d(E, "E")
    return C @ _solve_neg_A(A, E)


def check_detectable(A, C, E, i: int) -> bool:
    """Whether fault column ``i`` (0-based) has a non-zero steady-state output.

    The test is ``||C A^-1 E_i||_inf > 1e-10 ||C A^-1||_inf ||E_i||_inf``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C, E = _as2d(C, "C"), _as2d(E, "E")
    if not 0 <= i < E.shape[1]:
        raise IndexError(f"fault index {i} outside 0..{E.shape[1] - 1}")
    CAinv = _solve_neg_A(A.T, C.T).T  # C (-A)^-1
    Ei = E[:, i]
    tol = 1e-10 * np.linalg.norm(CAinv, np.inf) * np.linalg.norm(Ei, np.inf)
    return bool(np.linalg.norm(CAinv @ Ei, np.inf) > tol) and bool(np.any(Ei))


def isolability_matrix(A, C, E) -> np.ndarray:
    """Block matrix ``[[-A, E], [C, 0]]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C, E = _as2d(C, "C"), _as2d(E, "E")
    n, k = A.shape[0], E.shape[1]
    top = np.hstack([-A, E])
    bottom = np.hstack([C, np.zeros((C.shape[0], k))])
    return np.vstack([top, bottom])


def numerical_rank(M) -> tuple[int, float]:
    """SVD rank with threshold ``max(M.shape) * sigma_max * eps``.

    Returns the rank and the smallest retained singular value (0 if none).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0, 0.0
    s = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * s[0] * np.finfo(float).eps
    kept = s[s > tol]
    return int(kept.size), float(kept[-1]) if kept.size else 0.0


def check_isolable(A, C, E) -> tuple[bool, int]:
    """Rank test ``rank [[-A, E], [C, 0]] == N + K``."""
    ok, rank, _ = _isolable(A, C, E)
    return ok, rank


def _isolable(A, C, E):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = _as2d(E, "E")
    if E.shape[1] == 0:
        rank, smin = numerical_rank(-A)
        return rank == A.shape[0], rank, smin
    M = isolability_matrix(A, C, E)
    rank, smin = numerical_rank(M)
    return rank == A.shape[0] + E.shape[1], rank, smin


def check_pair_isolable(A, C, E, i: int, j: int) -> bool:
    """Pairwise condition ``C A^-1 [E_i E_j] != 0``.

    This is weaker than the rank test; it only asks that the pair's combined
    steady-state signature is non-zero.
    """
    E = _as2d(E, "E")
    for idx in (i, j):
        if not 0 <= idx < E.shape[1]:
            raise IndexError(f"fault index {idx} outside 0..{E.shape[1] - 1}")
    G = steady_state_gain(A, C, E[:, [i, j]])
    ref = np.linalg.norm(steady_state_gain(A, C, np.eye(np.asarray(A).shape[0])), np.inf)
    return bool(np.max(np.abs(G)) > 1e-10 * ref * np.max(np.abs(E[:, [i, j]])))


@dataclass
class DiagnosabilityCertificate:
    detectable_per_fault: list
    isolable: bool
    rank_value: int
    gain: np.ndarray
    smallest_singular_value: float
    n_states: int
    n_faults: int
    sensor_nodes: list | None = None

    @property
    def required_rank(self) -> int:
        return self.n_states + self.n_faults

    def report(self) -> str:
        lines = ["Diagnosability certificate", ""]
        if self.sensor_nodes is not None:
            lines.append(f"sensor nodes:          {', '.join(map(str, self.sensor_nodes))}")
        lines += [
            f"states N:              {self.n_states}",
            f"fault modes K:         {self.n_faults}",
            f"rank [-A E; C 0]:      {self.rank_value} (required {self.required_rank})",
            f"smallest retained sv:  {self.smallest_singular_value:.6e}",
            f"isolable:              {'yes' if self.isolable else 'no'}",
            "",
            "detectable per fault:",
        ]
        for i, d in enumerate(self.detectable_per_fault):
            lines.append(f"  f_{i + 1}: {'yes' if d else 'no'}")
        lines += ["", "steady-state gain G = C(-A)^-1 E:"]
        for row in np.atleast_2d(self.gain):
            lines.append("  " + "  ".join(f"{v: .6e}" for v in row))
        return "\n".join(lines) + "\n"


def certify(A, C, E, sensor_nodes=None) -> DiagnosabilityCertificate:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C, E = _as2d(C, "C"), _as2d(E, "E")
    gain = steady_state_gain(A, C, E)
    det = [check_detectable(A, C, E, i) for i in range(E.shape[1])]
    ok, rank, smin = _isolable(A, C, E)
    return DiagnosabilityCertificate(
        detectable_per_fault=det, isolable=ok, rank_value=rank, gain=gain,
        smallest_singular_value=smin, n_states=A.shape[0], n_faults=E.shape[1],
        sensor_nodes=None if sensor_nodes is None else [int(s) for s in sensor_nodes],
    )
