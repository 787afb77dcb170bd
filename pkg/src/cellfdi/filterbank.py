"""Bank of continuous-time Kalman filters, one per zone, and threshold logic.

Filter ``i`` sees every sensor channel; its measurement covariance trusts the
other zones' sensors and distrusts its own, so faults outside zone ``i`` are
absorbed into the estimate while a fault inside zone ``i`` shows up in the
innovation ``I_i = y_i - C_i x_hat``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .simulator import Trajectory, check_step, rk4_step_matrices
from .thermal import LumpedModel

logger = logging.getLogger(__name__)

MODES = ("steady_state", "time_varying")


class FilterDesignError(ValueError):
    pass


@dataclass
class FilterDesign:
    zone: int                 # 0-based
    L: np.ndarray             # (N, K)
    Q_cov: np.ndarray         # (N, N)
    S_cov: np.ndarray         # (K, K)
    P: np.ndarray             # (N, N); initial covariance in time_varying mode
    G: np.ndarray             # (N, N) process-noise input map
    mode: str = "steady_state"

    def riccati_residual(self, A: np.ndarray, C: np.ndarray) -> float:
        P = self.P
        R = (A @ P + P @ A.T + self.G @ self.Q_cov @ self.G.T
             - P @ C.T @ np.linalg.solve(self.S_cov, C @ P))
        return float(np.max(np.sum(np.abs(R), axis=1)))


# process-noise gain per unit standard deviation of the monitored channel's
# measurement noise, W/K; 4 W at s_own = 0.1 K^2
NOISE_RATIO = 4.0 / np.sqrt(0.1)


def noise_input_map(model: LumpedModel, noise_gain: float) -> np.ndarray:
    """Process-noise input map ``G = noise_gain / (rho Cp v_c) * Mo``.

    The process disturbance is read as an unmodelled heat rate; a unit noise
    sample corresponds to ``noise_gain`` watts spread over the cell.
    """
    scale = noise_gain / (model.params.rho_cp * model.geometry.volume_vc)
    n = model.n_states
    Mo = model.Mo if model.Mo.shape == (n, n) else np.eye(n)
    return scale * Mo


def default_noise_gain(s_monitored: float) -> float:
    """Noise gain that keeps ``G^2 q / s`` on the monitored channel fixed.

    Filters with different measurement tunings (a two-sensor bank, a single
    sensor) then share the same process-to-measurement noise ratio on the
    channel whose innovation they report.
    """
    return float(NOISE_RATIO * np.sqrt(s_monitored))


def asymmetric_S(n_sensors: int, zone: int, own: float = 0.1, other: float = 0.001) -> np.ndarray:
    """Measurement covariance distrusting the zone's own channel."""
    if n_sensors == 1:
        return np.array([[other]])
    s = np.full(n_sensors, other)
    s[zone] = own
    return np.diag(s)


def _check_cov(M, name, definite):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise FilterDesignError(f"{name} must be square and symmetric")
    eig = np.linalg.eigvalsh(M)
    tol = 1e-12 * max(1.0, np.abs(eig).max())
    if definite and eig.min() <= 0:
        raise FilterDesignError(f"{name} must be positive definite")
    if eig.min() < -tol:
        raise FilterDesignError(f"{name} must be positive semi-definite")
    return M


def undetectable_modes(A: np.ndarray, C: np.ndarray, tol: float = 1e-9) -> list[complex]:
    """Eigenvalues of A with Re >= 0 that C cannot see (PBH test)."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        H = np.vstack([lam * np.eye(n) - A, C])
        s = np.linalg.svd(H, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            bad.append(complex(lam))
    return bad


def design_filter(model: LumpedModel, zone: int, Q_cov, S_cov, mode: str = "steady_state",
                  G=None, P0=None) -> FilterDesign:
    """Kalman gain ``L = P C^T S^-1`` for the filter dedicated to ``zone`` (0-based)."""
    if mode not in MODES:
        raise FilterDesignError(f"mode must be one of {MODES}")
    A, C = model.A, model.C
    n, k = model.n_states, C.shape[0]
    if k == 0:
        raise FilterDesignError("model has no sensors")
    if not 0 <= zone < max(k, 1):
        raise FilterDesignError(f"zone {zone} outside 0..{k - 1}")
    Q_cov = _check_cov(Q_cov, "Q_cov", definite=False)
    S_cov = _check_cov(S_cov, "S_cov", definite=True)
    if Q_cov.shape != (n, n) or S_cov.shape != (k, k):
        raise FilterDesignError(f"Q_cov must be {n}x{n} and S_cov {k}x{k}")
    if G is None:
        G = noise_input_map(model, default_noise_gain(S_cov[zone, zone]))
    G = np.asarray(G, dtype=float)
    bad = undetectable_modes(A, C)
    if bad:
        raise FilterDesignError(f"(A, C) is not detectable: unobservable mode(s) {bad}")
    if mode == "time_varying":
        P = np.eye(n) if P0 is None else _check_cov(P0, "P0", definite=False)
        L = P @ C.T @ np.linalg.inv(S_cov)
        return FilterDesign(zone, L, Q_cov, S_cov, P, G, mode)
    try:
        P = scipy.linalg.solve_continuous_are(A.T, C.T, G @ Q_cov @ G.T, S_cov)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FilterDesignError(f"Riccati equation has no stabilizing solution: {exc}") from exc
    P = (P + P.T) / 2
    L = P @ C.T @ np.linalg.inv(S_cov)
    design = FilterDesign(zone, L, Q_cov, S_cov, P, G, mode)
    resid = design.riccati_residual(A, C)
    scale = float(np.max(np.sum(np.abs(P), axis=1)))
    if resid >= 1e-8 * scale:
        warnings.warn(f"Riccati residual {resid:.3e} exceeds 1e-8 * ||P|| = {1e-8 * scale:.3e}")
    return design


def design_bank(model: LumpedModel, q_scale: float = 100.0, s_own: float = 0.1,
                s_other: float = 0.001, mode: str = "steady_state", G=None) -> list[FilterDesign]:
    """One filter per sensor with ``Q = q_scale * I`` and the asymmetric S tuning."""
    n, k = model.n_states, model.C.shape[0]
    return [
        design_filter(model, i, q_scale * np.eye(n), asymmetric_S(k, i, s_own, s_other), mode, G)
        for i in range(k)
    ]


def run_filter(design: FilterDesign, model: LumpedModel, trajectory: Trajectory,
               initial_estimate=None) -> np.ndarray:
    """Innovation sequence of ``design.zone``'s channel over the trajectory.

    Returns the full innovation matrix ``(K, steps)``; row ``design.zone`` is
    the zone's residual.  Inputs and measurements are linearly interpolated at
    the RK4 half step.
    """
    A, B, C = model.A, model.B, model.C
    u, y, t = trajectory.inputs, trajectory.outputs, trajectory.times
    n, steps = model.n_states, t.size
    if u.shape != (B.shape[1], steps) or y.shape != (C.shape[0], steps):
        raise ValueError(
            f"trajectory shapes {u.shape}, {y.shape} do not match model "
            f"({B.shape[1]}, {C.shape[0]}) over {steps} steps"
        )
    if design.L.shape != (n, C.shape[0]):
        raise ValueError("filter gain does not match the model")
    dt = float(t[1] - t[0]) if steps > 1 else 1.0
    if initial_estimate is None:
        xh = np.full(n, model.params.theta_ambient)
    else:
        xh = np.asarray(initial_estimate, dtype=float)
        xh = np.full(n, float(xh)) if xh.ndim == 0 else xh.copy()
    if design.mode == "steady_state":
        Acl = A - design.L @ C
        check_step(Acl, dt)
        M, N0, Nh, N1 = rk4_step_matrices(Acl, dt)
        v = B @ u + design.L @ y
        v_half = (v[:, :-1] + v[:, 1:]) / 2
        drive = N0 @ v[:, :-1] + Nh @ v_half + N1 @ v[:, 1:]
        est = np.empty((n, steps))
        est[:, 0] = xh
        for k in range(steps - 1):
            xh = M @ xh + drive[:, k]
            est[:, k + 1] = xh
        return y - C @ est
    return _run_time_varying(design, model, u, y, dt, xh)


def _run_time_varying(design, model, u, y, dt, xh):
    A, B, C = model.A, model.B, model.C
    Sinv = np.linalg.inv(design.S_cov)
    GQG = design.G @ design.Q_cov @ design.G.T
    CtSinvC = C.T @ Sinv @ C
    P = design.P.copy()
    steps = y.shape[1]
    innov = np.empty_like(y)
    bu = B @ u

    def rhs(x, P, bu_t, y_t):
        L = P @ C.T @ Sinv
        dx = A @ x + bu_t + L @ (y_t - C @ x)
        dP = A @ P + P @ A.T + GQG - P @ CtSinvC @ P
        return dx, dP

    for k in range(steps):
        innov[:, k] = y[:, k] - C @ xh
        if k == steps - 1:
            break
        bh, yh = (bu[:, k] + bu[:, k + 1]) / 2, (y[:, k] + y[:, k + 1]) / 2
        k1 = rhs(xh, P, bu[:, k], y[:, k])
        k2 = rhs(xh + dt / 2 * k1[0], P + dt / 2 * k1[1], bh, yh)
        k3 = rhs(xh + dt / 2 * k2[0], P + dt / 2 * k2[1], bh, yh)
        k4 = rhs(xh + dt * k3[0], P + dt * k3[1], bu[:, k + 1], y[:, k + 1])
        xh = xh + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        P = P + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        P = (P + P.T) / 2
    return innov


def run_bank(designs: list[FilterDesign], model: LumpedModel, trajectory: Trajectory,
             initial_estimate=None) -> np.ndarray:
    """Stack each filter's own-zone innovation into a ``(K, steps)`` array."""
    rows = [run_filter(d, model, trajectory, initial_estimate)[d.zone] for d in designs]
    return np.vstack(rows)


@dataclass
class DetectorConfig:
    thresholds_beta: np.ndarray
    far_target: float | None = None
    settle_window: float = 1.0

    def __post_init__(self):
        self.thresholds_beta = np.atleast_1d(np.asarray(self.thresholds_beta, dtype=float))
        if np.any(self.thresholds_beta <= 0):
            raise ValueError("thresholds must be positive")
        if self.far_target is not None and not 0 <= self.far_target < 1:
            raise ValueError("far_target must be in [0, 1)")
        if self.settle_window < 0:
            raise ValueError("settle_window must be non-negative")


@dataclass
class DiagnosisReport:
    times: np.ndarray
    innovations: np.ndarray             # (K, steps)
    thresholds: np.ndarray              # (K,)
    verdicts: np.ndarray                # (K, steps) bool, True = H1
    convergence_time: list              # per zone, s (None if never inside the band)
    detection_times: list               # per zone, s after onset (None if missed / no fault)
    false_alarm_counts: list            # per zone
    cross_alarm_counts: list            # per zone: alarms while only other zones are faulty
    fault_onsets: list = field(default_factory=list)

    def isolated(self, zone: int) -> bool:
        """Zone's fault detected and no other zone alarmed while it was active."""
        return self.detection_times[zone] is not None and all(
            c == 0 for i, c in enumerate(self.cross_alarm_counts) if i != zone
        )

    def to_csv(self, path: str | Path) -> None:
        k = self.innovations.shape[0]
        header = (["time"] + [f"I_{i + 1}" for i in range(k)]
                  + [f"verdict_{i + 1}" for i in range(k)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for j, t in enumerate(self.times):
                writer.writerow([repr(float(t))]
                                + [repr(float(v)) for v in self.innovations[:, j]]
                                + ["H1" if v else "H0" for v in self.verdicts[:, j]])


def _first_inside(inside: np.ndarray, start: int) -> int | None:
    hits = np.flatnonzero(inside[start:])
    return None if hits.size == 0 else start + int(hits[0])


def detect(innovations, config: DetectorConfig, times=None, fault_signal=None) -> DiagnosisReport:
    """Apply ``|I_i| > beta_i => H1`` and score detections and false alarms.

    ``fault_signal`` is the ``(K, steps)`` true fault amplitude per zone, used
    to locate onsets and fault-free periods.  The convergence time is the
    first entry of the innovation into the band.  Alarms are H0 -> H1
    transitions and are scored from ``settle_window`` seconds after
    convergence; after each of the zone's own faults ends, scoring resumes
    ``settle_window`` seconds after the innovation re-enters the band.  An
    alarm is false when no zone is faulty and a cross alarm when only other
    zones are faulty.
    """
    I = np.atleast_2d(np.asarray(innovations, dtype=float))
    k, steps = I.shape
    beta = config.thresholds_beta
    if beta.size == 1 and k > 1:
        beta = np.full(k, beta[0])
    if beta.size != k:
        raise ValueError(f"{beta.size} thresholds for {k} innovation channels")
    t = np.arange(steps, dtype=float) if times is None else np.asarray(times, dtype=float)
    dt = t[1] - t[0] if steps > 1 else 1.0
    grace = int(round(config.settle_window / dt))
    active = np.zeros((k, steps), bool)
    if fault_signal is not None:
        fs = np.atleast_2d(np.asarray(fault_signal, dtype=float))
        active[: min(k, fs.shape[0])] = fs[:k] != 0
    any_other = [np.any(np.delete(active, i, axis=0), axis=0) for i in range(k)]

    verdicts = np.abs(I) > beta[:, None]
    conv, det, fa, cross, onsets = [], [], [], [], []
    for i in range(k):
        inside = ~verdicts[i]
        s0 = _first_inside(inside, 0)
        conv.append(None if s0 is None else float(t[s0] - t[0]))
        starts = np.concatenate([[False], active[i][:-1]])
        on_idx = np.flatnonzero(active[i] & ~starts)
        onsets.append([float(t[j]) for j in on_idx])
        detection = None
        if on_idx.size:
            j0 = on_idx[0]
            hits = np.flatnonzero(verdicts[i, j0:])
            if hits.size:
                detection = float(t[j0 + hits[0]] - t[j0])
        det.append(detection)

        scored = np.zeros(steps, bool)
        if s0 is not None:
            scored[s0 + grace:] = True
        scored &= ~active[i]
        ends = np.flatnonzero(~active[i] & starts)
        for end in ends:
            again = _first_inside(inside, end)
            stop = steps if again is None else min(steps, again + grace)
            scored[end:stop] = False
        rising = verdicts[i] & ~np.concatenate([[True], verdicts[i][:-1]])
        counted = rising & scored
        fa.append(int(np.sum(counted & ~any_other[i])))
        cross.append(int(np.sum(counted & any_other[i])))
    return DiagnosisReport(times=t, innovations=I, thresholds=beta, verdicts=verdicts,
                           convergence_time=conv, detection_times=det, false_alarm_counts=fa,
                           cross_alarm_counts=cross, fault_onsets=onsets)


def calibrate_thresholds(no_fault_innovations, far_target: float, times=None,
                         settle_window: float = 1.0, start=None) -> np.ndarray:
    """Empirical ``(1 - far_target)`` quantile of ``|I_i|`` after convergence.

    The post-convergence window starts at ``start`` (s) when given, otherwise
    ``settle_window`` seconds after the channel's initial transient ends (the
    first time ``|I|`` drops below its own median).
    """
    I = np.atleast_2d(np.asarray(no_fault_innovations, dtype=float))
    if I.size == 0 or I.shape[1] == 0:
        raise ValueError("empty innovation record")
    if not 0 <= far_target < 1:
        raise ValueError("far_target must be in [0, 1)")
    t = np.arange(I.shape[1], dtype=float) if times is None else np.asarray(times, dtype=float)
    out = []
    for row in I:
        a = np.abs(row)
        if start is not None:
            window = a[t >= start]
        else:
            j = int(np.argmax(a <= np.median(a)))
            window = a[t >= t[j] + settle_window]
        if window.size == 0:
            raise ValueError("empty post-convergence window")
        if far_target > 0 and window.size < 1 / far_target:
            warnings.warn(f"{window.size} samples is short for a false-alarm target of {far_target}")
        out.append(float(np.max(window)) if far_target == 0 else float(np.quantile(window, 1 - far_target)))
    return np.array(out)


def write_thresholds(path: str | Path, beta) -> None:
    """Threshold file: one ``beta_i = value`` line per zone (K)."""
    lines = ["# per-zone innovation thresholds, K"]
    lines += [f"beta_{i + 1} = {float(b)!r}" for i, b in enumerate(np.atleast_1d(beta))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_thresholds(path: str | Path) -> np.ndarray:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key.startswith("beta_") or not key[5:].isdigit():
            raise ValueError(f"{path}:{lineno}: expected 'beta_<zone> = value'")
        values[int(key[5:])] = float(value)
    if sorted(values) != list(range(1, len(values) + 1)):
        raise ValueError(f"{path}: thresholds must be numbered beta_1..beta_K")
    return np.array([values[i] for i in range(1, len(values) + 1)])
