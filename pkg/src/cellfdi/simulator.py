"""Forward simulation of the lumped thermal model with injected faults.

Integration is fixed-step classical RK4.  For a linear right-hand side
``dx/dt = A x + w(t)`` one RK4 step is itself linear in ``x`` and in the three
stage inputs ``w(t)``, ``w(t + h/2)``, ``w(t + h)``, so the step is precomputed
once as ``x' = M x + N0 w0 + Nh wh + N1 w1``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .thermal import ElectricalState, LumpedModel, affine_ocv

logger = logging.getLogger(__name__)

# Intersection of the RK4 stability region with the negative real axis.
RK4_STABILITY_BOUND = 2.785293563405282

FAULT_KINDS = ("internal", "external")
FAULT_SHAPES = ("pulse", "step", "ramp")
FOOTPRINTS = ("node", "kernel", "zone", "uniform")
FAULT_UNITS = ("direct", "watts")


class ScenarioError(ValueError):
    pass


class StepSizeError(ScenarioError):
    def __init__(self, dt: float, suggested: float, rate: float):
        super().__init__(
            f"dt={dt:g} s is outside the RK4 stability region (fastest mode {rate:.3g} 1/s); "
            f"use dt <= {suggested:.3g} s"
        )
        self.dt = dt
        self.suggested = suggested


@dataclass(frozen=True)
class FaultSpec:
    """One additive thermal fault.

    ``magnitude`` is in watts for pulse and step faults, ``ramp_rate`` in W/s
    for ramp faults.  The target is either a 1-based ``node`` or a 1-based
    ``zone`` (the latter requires a model with a zonal fault matrix).
    ``footprint`` selects how the fault is spread: ``node`` (single node),
    ``kernel`` (3x3 neighbourhood of ``node``, optionally weighted),
    ``zone`` (all nodes of ``zone``) or ``uniform`` (whole cell).
    """

    kind: str = "internal"
    shape: str = "pulse"
    node: int | None = None
    magnitude: float = 0.0
    t_start: float = 0.0
    t_end: float | None = None
    ramp_rate: float = 0.0
    zone: int | None = None
    footprint: str | None = None
    kernel_weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ScenarioError(f"fault kind must be one of {FAULT_KINDS}, got {self.kind!r}")
        if self.shape not in FAULT_SHAPES:
            raise ScenarioError(f"fault shape must be one of {FAULT_SHAPES}, got {self.shape!r}")
        if self.t_start < 0:
            raise ScenarioError("t_start must be >= 0")
        if self.magnitude < 0 or self.ramp_rate < 0:
            raise ScenarioError("fault magnitude and ramp_rate must be >= 0")
        if self.shape == "pulse" and (self.t_end is None or not self.t_end > self.t_start):
            raise ScenarioError("pulse faults need t_end > t_start")
        footprint = self.footprint
        if footprint is None:
            if self.zone is not None:
                footprint = "zone"
            elif self.node is not None:
                footprint = "node"
            else:
                footprint = "uniform"
            object.__setattr__(self, "footprint", footprint)
        if footprint not in FOOTPRINTS:
            raise ScenarioError(f"footprint must be one of {FOOTPRINTS}, got {footprint!r}")
        if footprint in ("node", "kernel") and self.node is None:
            raise ScenarioError(f"footprint {footprint!r} needs a node")
        if footprint == "zone" and self.zone is None:
            raise ScenarioError("footprint 'zone' needs a zone")
        if self.kernel_weights is not None:
            w = np.asarray(self.kernel_weights, dtype=float)
            if w.shape != (3, 3) or np.any(w < 0):
                raise ScenarioError("kernel_weights must be a non-negative 3x3 array")
            object.__setattr__(self, "kernel_weights", tuple(map(tuple, w)))


def build_fault_signal(spec: FaultSpec, times) -> np.ndarray:
    """Fault amplitude (W) at each time in ``times``."""
    t = np.asarray(times, dtype=float)
    on = t >= spec.t_start
    if spec.shape == "pulse":
        return np.where(on & (t < spec.t_end), spec.magnitude, 0.0)
    if spec.shape == "step":
        return np.where(on, spec.magnitude, 0.0)
    return np.where(on, spec.ramp_rate * (t - spec.t_start), 0.0)


@dataclass
class CurrentProfile:
    """Piecewise-linear applied current (A, positive = discharge)."""

    times: np.ndarray
    currents: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.currents = np.atleast_1d(np.asarray(self.currents, dtype=float))
        if self.times.shape != self.currents.shape or self.times.size == 0:
            raise ScenarioError("current profile needs matching, non-empty time and current arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ScenarioError("current profile times must be strictly increasing")

    @classmethod
    def constant(cls, current: float) -> "CurrentProfile":
        return cls(np.array([0.0]), np.array([float(current)]))

    @classmethod
    def from_csv(cls, path: str | Path) -> "CurrentProfile":
        """Two-column CSV ``time_s, current_A``; a non-numeric first row is a header."""
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue
                    raise ScenarioError(f"{path}:{lineno}: expected 'time_s,current_A'")
        data = np.array(rows, dtype=float)
        return cls(data[:, 0], data[:, 1])

    def __call__(self, t):
        return np.interp(t, self.times, self.currents)


@dataclass
class ScenarioSpec:
    """Fully determines a simulation run.

    ``fault_units`` selects how fault amplitudes enter the state equation:
    ``direct`` adds ``Mo @ weights * amplitude`` to dT/dt (the amplitude acts
    as a heating rate in K/s per unit weight); ``watts`` treats the amplitude
    as a power in W, spread over the footprint so the cell receives exactly
    that power (weights normalized to average 1 over the cell, then divided
    by ``rho * Cp * v_c``).
    """

    current_profile: CurrentProfile = field(default_factory=lambda: CurrentProfile.constant(0.0))
    faults: list[FaultSpec] = field(default_factory=list)
    meas_noise_var: float = 0.0
    duration: float = 10.0
    dt: float = 0.01
    initial_temp: float | Sequence[float] | None = None
    rng_seed: int = 0
    fault_units: str = "direct"

    def __post_init__(self):
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not self.duration >= self.dt:
            raise ScenarioError("duration must be at least dt")
        if not self.meas_noise_var >= 0:
            raise ScenarioError("meas_noise_var must be non-negative")
        if self.fault_units not in FAULT_UNITS:
            raise ScenarioError(f"fault_units must be one of {FAULT_UNITS}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class Trajectory:
    times: np.ndarray            # (steps,)
    states: np.ndarray           # (N, steps)
    outputs: np.ndarray          # (K, steps), noisy
    inputs: np.ndarray           # (N + 1, steps)
    true_fault_signal: np.ndarray  # (zones, steps), fault amplitudes per zone
    soc: np.ndarray              # (steps,)
    noise: np.ndarray            # (K, steps), the sample added to C @ states
    soc_clamped: bool = False

    def to_csv(self, path: str | Path) -> None:
        n, k, z = self.states.shape[0], self.outputs.shape[0], self.true_fault_signal.shape[0]
        header = (["time"] + [f"T_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(k)]
                  + [f"f_{i + 1}" for i in range(z)])
        data = np.vstack([self.times[None, :], self.states, self.outputs, self.true_fault_signal]).T
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(data.tolist())


def default_electrical(soc: float = 1.0) -> ElectricalState:
    return ElectricalState(soc=soc, capacity_Q=36000.0, applied_current_Ja=0.0,
                           ocv_curve=affine_ocv(), internal_resistance=0.002)


def rk4_step_matrices(A: np.ndarray, h: float):
    """Matrices ``(M, N0, Nh, N1)`` of one RK4 step for ``dx/dt = A x + w``."""
    n = A.shape[0]
    I = np.eye(n)
    hA = h * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    M = I + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    # w0 enters through k1; wh through k2 and k3; w1 through k4.
    N0 = h / 6 * (I + hA + hA2 / 2 + hA3 / 4)
    Nh = h / 6 * (4 * I + 2 * hA + hA2 / 2)
    N1 = h / 6 * I
    return M, N0, Nh, N1


def check_step(A: np.ndarray, dt: float) -> None:
    rate = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if rate * dt > RK4_STABILITY_BOUND:
        raise StepSizeError(dt, 0.9 * RK4_STABILITY_BOUND / rate, rate)


def zone_of_nodes(model: LumpedModel) -> np.ndarray:
    """0-based zone index of each node derived from E (-1 where no zone)."""
    out = np.full(model.n_states, -1)
    for zone in range(model.E.shape[1]):
        out[(model.E[:, zone] != 0) & (out < 0)] = zone
    return out


def fault_weights(spec: FaultSpec, model: LumpedModel) -> np.ndarray:
    """Per-node footprint weights (before unit conversion)."""
    n = model.n_states
    w = np.zeros(n)
    grid = model.grid
    if spec.footprint == "node":
        _check_node(spec.node, n)
        w[spec.node - 1] = 1.0
    elif spec.footprint == "kernel":
        _check_node(spec.node, n)
        kern = np.ones((3, 3)) if spec.kernel_weights is None else np.asarray(spec.kernel_weights)
        m0, n0 = grid.position(spec.node)
        for dn in (-1, 0, 1):
            for dm in (-1, 0, 1):
                mm, nn = m0 + dm, n0 + dn
                if 1 <= mm <= grid.nx and 1 <= nn <= grid.ny:
                    w[grid.node_number(mm, nn) - 1] += kern[dn + 1, dm + 1]
    elif spec.footprint == "zone":
        if not 1 <= spec.zone <= model.E.shape[1]:
            raise ScenarioError(f"zone {spec.zone} outside 1..{model.E.shape[1]}")
        w = (model.E[:, spec.zone - 1] != 0).astype(float)
    else:
        w[:] = 1.0
    return w


def _check_node(node, n):
    if not 1 <= node <= n:
        raise ScenarioError(f"fault node {node} outside 1..{n}")


def fault_input_vector(spec: FaultSpec, model: LumpedModel, units: str) -> np.ndarray:
    """Map a unit fault amplitude to dT/dt (K/s per W or per unit amplitude)."""
    w = fault_weights(spec, model)
    if units == "watts":
        if w.sum() == 0:
            return w
        w = w * model.n_states / w.sum()
        w = w / (model.params.rho_cp * model.geometry.volume_vc)
    if spec.kind == "internal" and spec.footprint != "zone":
        # internal hot spots are distributed through Mo; zone footprints already
        # come from E, which is built from Mo
        w = model.Mo @ w if model.Mo.shape[1] == model.n_states else w
    return w


def fault_zone(spec: FaultSpec, model: LumpedModel) -> int:
    """0-based zone a fault belongs to (-1 if the model has no zones)."""
    if spec.zone is not None:
        return spec.zone - 1
    if spec.node is not None:
        return int(zone_of_nodes(model)[spec.node - 1])
    return -1


def simulate(model: LumpedModel, scenario: ScenarioSpec,
             electrical: ElectricalState | None = None) -> Trajectory:
    """Integrate the model under ``scenario`` and sample noisy sensor outputs."""
    A, B, C = model.A, model.B, model.C
    n = model.n_states
    dt = scenario.dt
    check_step(A, dt)
    times = scenario.times()
    steps = times.size
    half = times[:-1] + dt / 2
    elec = electrical or default_electrical()
    params = model.params

    # fault forcing at sample and half-step times
    n_zones = model.E.shape[1]
    zone_signal = np.zeros((max(n_zones, 1), steps))
    f_full = np.zeros((n, steps))
    f_half = np.zeros((n, steps - 1))
    for spec in scenario.faults:
        vec = fault_input_vector(spec, model, scenario.fault_units)
        sig = build_fault_signal(spec, times)
        f_full += np.outer(vec, sig)
        f_half += np.outer(vec, build_fault_signal(spec, half))
        zone = fault_zone(spec, model)
        if zone >= 0:
            zone_signal[zone] += sig

    # SOC by Coulomb counting (Simpson current integral), clamped
    cur = scenario.current_profile(times)
    cur_half = scenario.current_profile(half)
    charge = np.concatenate([[0.0], np.cumsum(dt / 6 * (cur[:-1] + 4 * cur_half + cur[1:]))])
    soc_raw = elec.soc - charge / elec.capacity_Q
    clamped = bool(np.any((soc_raw < 0) | (soc_raw > 1)))
    if clamped:
        logger.warning("SOC left [0, 1] during the run and was clamped")
    soc = np.clip(soc_raw, 0.0, 1.0)

    g = np.ones(n) if elec.g_weights is None else elec.g_weights
    vc = model.geometry.volume_vc

    def ohmic(current):
        # E_OCV - E_term = J R_int in simulation mode, so the OCV drops out
        return current * current * elec.internal_resistance

    qdot = np.outer(g, ohmic(cur)) / vc
    qdot_half = np.outer(g, ohmic(cur_half)) / vc
    amb = params.theta_ambient
    inputs = np.vstack([qdot, np.full((1, steps), amb)])
    w_full = B @ inputs + f_full
    w_half = B @ np.vstack([qdot_half, np.full((1, steps - 1), amb)]) + f_half

    x0 = _initial_state(scenario.initial_temp, n, amb)
    states = np.empty((n, steps))
    states[:, 0] = x0
    gamma = params.entropic_Gamma
    if gamma == 0.0:
        M, N0, Nh, N1 = rk4_step_matrices(A, dt)
        drive = N0 @ w_full[:, :-1] + Nh @ w_half + N1 @ w_full[:, 1:]
        x = x0
        for k in range(steps - 1):
            x = M @ x + drive[:, k]
            states[:, k + 1] = x
    else:
        # entropic heat -g J Theta Gamma / v_c makes the dynamics time varying
        coef_full = g[:, None] * cur[None, :] * gamma / (vc * params.rho_cp)
        coef_half = g[:, None] * cur_half[None, :] * gamma / (vc * params.rho_cp)
        x = x0
        for k in range(steps - 1):
            def f(xx, w, c):
                return A @ xx + w - c * xx
            k1 = f(x, w_full[:, k], coef_full[:, k])
            k2 = f(x + dt / 2 * k1, w_half[:, k], coef_half[:, k])
            k3 = f(x + dt / 2 * k2, w_half[:, k], coef_half[:, k])
            k4 = f(x + dt * k3, w_full[:, k + 1], coef_full[:, k + 1])
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            states[:, k + 1] = x
        inputs[:n] -= g[:, None] * cur[None, :] * gamma * states / vc

    rng = np.random.default_rng(scenario.rng_seed)
    z = rng.standard_normal((C.shape[0], steps))
    noise = np.sqrt(scenario.meas_noise_var) * z
    outputs = C @ states + noise
    return Trajectory(times=times, states=states, outputs=outputs, inputs=inputs,
                      true_fault_signal=zone_signal, soc=soc, noise=noise, soc_clamped=clamped)


def _initial_state(initial, n, ambient):
    if initial is None:
        return np.full(n, float(ambient))
    arr = np.asarray(initial, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"initial_temp must be scalar or length {n}")
    return arr.copy()
