"""Lumped 2D thermal model of a large-format pouch/prismatic cell.

The cell temperature field is discretized on an ``nx`` by ``ny`` grid of
rectangular sub-domains (method of lines).  Nodes are numbered row-major
starting at 1 in the public API: node ``(m, n)`` with ``1 <= m <= nx`` along x
and ``1 <= n <= ny`` along y has number ``(n - 1) * nx + m``.  Internally all
arrays are 0-based.

The resulting linear model is::

    dT/dt = A T + B u + Mo f_o,     y = C T

with ``u = [qdot_1, ..., qdot_N, theta_amb]`` (volumetric heats in W/m^3
followed by the ambient temperature in K).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


class ModelError(ValueError):
    """Raised for invalid geometry, parameters or grid requests."""


@dataclass(frozen=True)
class CellGeometry:
    length_M: float
    breadth_N: float
    depth_p: float
    surface_area_As: float | None = None
    volume_vc: float | None = None

    def __post_init__(self):
        for name in ("length_M", "breadth_N", "depth_p"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not (self.depth_p < self.length_M and self.depth_p < self.breadth_N):
            raise ModelError("depth_p must be smaller than both length_M and breadth_N")
        if self.surface_area_As is None:
            object.__setattr__(self, "surface_area_As", self.length_M * self.breadth_N)
        if self.volume_vc is None:
            object.__setattr__(self, "volume_vc", self.surface_area_As * self.depth_p)
        if self.surface_area_As <= 0:
            raise ModelError("surface_area_As must be positive")
        expected = self.surface_area_As * self.depth_p
        if abs(self.volume_vc - expected) > 1e-9 * expected:
            raise ModelError(
                f"volume_vc={self.volume_vc} inconsistent with surface_area_As*depth_p={expected}"
            )


@dataclass(frozen=True)
class ThermalParams:
    density_rho: float
    heat_capacity_Cp: float
    conductivity_k: float
    h_transfer_ho: float
    gamma_x0: float
    gamma_M: float
    gamma_y0: float
    gamma_N: float
    theta_ambient: float = 298.15
    entropic_Gamma: float = 0.0

    def __post_init__(self):
        for name in ("density_rho", "heat_capacity_Cp", "conductivity_k"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.h_transfer_ho >= 0:
            raise ModelError(f"h_transfer_ho must be non-negative, got {self.h_transfer_ho!r}")
        values = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(math.isfinite(v) for v in values):
            raise ModelError("thermal parameters must be finite")

    @property
    def rho_cp(self) -> float:
        return self.density_rho * self.heat_capacity_Cp


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    dx: float
    dy: float

    @property
    def node_count(self) -> int:
        return self.nx * self.ny

    def node_number(self, m: int, n: int) -> int:
        """1-based node number of grid position ``(m, n)`` (both 1-based)."""
        if not (1 <= m <= self.nx and 1 <= n <= self.ny):
            raise ModelError(f"position ({m}, {n}) outside {self.nx}x{self.ny} grid")
        return (n - 1) * self.nx + m

    def position(self, node: int) -> tuple[int, int]:
        """Inverse of :meth:`node_number`."""
        if not 1 <= node <= self.node_count:
            raise ModelError(f"node {node} outside 1..{self.node_count}")
        n, m = divmod(node - 1, self.nx)
        return m + 1, n + 1

    def neighbors(self, node: int) -> list[int]:
        m, n = self.position(node)
        out = []
        for dm, dn in ((0, -1), (-1, 0), (1, 0), (0, 1)):
            mm, nn = m + dm, n + dn
            if 1 <= mm <= self.nx and 1 <= nn <= self.ny:
                out.append(self.node_number(mm, nn))
        return sorted(out)

    def neighborhood(self, node: int, radius: int = 1) -> list[int]:
        """Nodes in the (2r+1)x(2r+1) square centred on ``node``, clipped to the grid."""
        m, n = self.position(node)
        out = []
        for nn in range(max(1, n - radius), min(self.ny, n + radius) + 1):
            for mm in range(max(1, m - radius), min(self.nx, m + radius) + 1):
                out.append(self.node_number(mm, nn))
        return out


@dataclass
class ElectricalState:
    soc: float
    capacity_Q: float
    applied_current_Ja: float
    ocv_curve: Callable[[float], float]
    internal_resistance: float = 0.002
    g_weights: np.ndarray | None = None
    terminal_voltage: float | None = None

    def __post_init__(self):
        if not self.capacity_Q > 0:
            raise ModelError("capacity_Q must be positive")
        if self.g_weights is not None:
            g = np.asarray(self.g_weights, dtype=float)
            if np.any(g < 0):
                raise ModelError("g_weights must be non-negative")
            if g.size and not math.isclose(g.mean(), 1.0, rel_tol=1e-9):
                raise ModelError(f"g_weights must average to 1, got mean {g.mean()}")
            self.g_weights = g


def affine_ocv(v_empty: float = 2.75, v_full: float = 4.2) -> Callable[[float], float]:
    """Open-circuit voltage linear in SOC on [0, 1]; raises outside that domain."""

    def ocv(soc: float) -> float:
        if not -1e-12 <= soc <= 1 + 1e-12:
            raise ModelError(f"soc {soc} outside OCV curve domain [0, 1]")
        return v_empty + (v_full - v_empty) * soc

    return ocv


def build_grid(geometry: CellGeometry, nx: int, ny: int) -> Grid:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ModelError(f"grid must have nx >= 1 and ny >= 1, got {nx}x{ny}")
    nx, ny = int(nx), int(ny)
    return Grid(nx=nx, ny=ny, dx=geometry.length_M / nx, dy=geometry.breadth_N / ny)


def _stencil(grid: Grid, params: ThermalParams):
    """Bracketed Laplacian/boundary stencil shared by A and B-bar.

    Returns ``(L, b)`` where ``A = k/(rho Cp) * (L - As*ho*I)`` and ``b`` holds the
    boundary contributions to B-bar divided by ``k``.  Boundary conditions use a
    central-difference ghost node, which doubles the inward coupling at edges.
    """
    n_nodes = grid.node_count
    L = np.zeros((n_nodes, n_nodes))
    b = np.zeros(n_nodes)
    ix2, iy2 = 1.0 / grid.dx**2, 1.0 / grid.dy**2
    for i in range(n_nodes):
        m, n = i % grid.nx, i // grid.nx
        # x direction
        if grid.nx == 1:
            L[i, i] += -2 * params.gamma_x0 / grid.dx + 2 * params.gamma_M / grid.dx
            b[i] += 2 * params.gamma_x0 / grid.dx - 2 * params.gamma_M / grid.dx
        elif m == 0:
            L[i, i] -= 2 * ix2 + 2 * params.gamma_x0 / grid.dx
            L[i, i + 1] += 2 * ix2
            b[i] += 2 * params.gamma_x0 / grid.dx
        elif m == grid.nx - 1:
            L[i, i] -= 2 * ix2 - 2 * params.gamma_M / grid.dx
            L[i, i - 1] += 2 * ix2
            b[i] -= 2 * params.gamma_M / grid.dx
        else:
            L[i, i] -= 2 * ix2
            L[i, i - 1] += ix2
            L[i, i + 1] += ix2
        # y direction
        if grid.ny == 1:
            L[i, i] += -2 * params.gamma_y0 / grid.dy + 2 * params.gamma_N / grid.dy
            b[i] += 2 * params.gamma_y0 / grid.dy - 2 * params.gamma_N / grid.dy
        elif n == 0:
            L[i, i] -= 2 * iy2 + 2 * params.gamma_y0 / grid.dy
            L[i, i + grid.nx] += 2 * iy2
            b[i] += 2 * params.gamma_y0 / grid.dy
        elif n == grid.ny - 1:
            L[i, i] -= 2 * iy2 - 2 * params.gamma_N / grid.dy
            L[i, i - grid.nx] += 2 * iy2
            b[i] -= 2 * params.gamma_N / grid.dy
        else:
            L[i, i] -= 2 * iy2
            L[i, i - grid.nx] += iy2
            L[i, i + grid.nx] += iy2
    return L, b


def assemble_A(grid: Grid, params: ThermalParams, geometry: CellGeometry) -> np.ndarray:
    L, _ = _stencil(grid, params)
    As_ho = geometry.surface_area_As * params.h_transfer_ho
    L[np.diag_indices_from(L)] -= As_ho
    return params.conductivity_k / params.rho_cp * L


def assemble_Bbar(grid: Grid, params: ThermalParams, geometry: CellGeometry) -> np.ndarray:
    """Ambient-input column of B before the ``1/(rho Cp)`` factor.

    The transverse term is ``k*As*ho`` so that it balances the ``-As*ho``
    diagonal entry of A, which carries the ``k/(rho Cp)`` prefactor.
    """
    _, b = _stencil(grid, params)
    k = params.conductivity_k
    return k * b + k * geometry.surface_area_As * params.h_transfer_ho


def assemble_B(grid: Grid, params: ThermalParams, geometry: CellGeometry) -> np.ndarray:
    n_nodes = grid.node_count
    bbar = assemble_Bbar(grid, params, geometry)
    return np.hstack([np.eye(n_nodes), bbar[:, None]]) / params.rho_cp


def heat_generation(
    elec: ElectricalState,
    node_temps,
    params: ThermalParams,
    geometry: CellGeometry,
) -> np.ndarray:
    """Per-node volumetric heat generation in W/m^3.

    ``E_term`` is taken from ``elec.terminal_voltage`` when given (replay of
    recorded data), otherwise ``E_OCV - J_a * R_int``.
    """
    temps = np.atleast_1d(np.asarray(node_temps, dtype=float))
    e_ocv = elec.ocv_curve(elec.soc)
    if elec.terminal_voltage is not None:
        e_term = elec.terminal_voltage
    else:
        e_term = e_ocv - elec.applied_current_Ja * elec.internal_resistance
    g = np.ones_like(temps) if elec.g_weights is None else elec.g_weights
    if g.shape != temps.shape:
        raise ModelError(f"g_weights shape {g.shape} does not match {temps.shape}")
    J = elec.applied_current_Ja
    return g * J * (e_ocv - e_term - temps * params.entropic_Gamma) / geometry.volume_vc


@dataclass(frozen=True)
class SocUpdate:
    soc: float
    clamped: bool


def soc_step(elec: ElectricalState, dt: float) -> SocUpdate:
    """Coulomb-counting SOC update; the result is clamped to [0, 1]."""
    if not dt > 0:
        raise ModelError("dt must be positive")
    soc = elec.soc - elec.applied_current_Ja * dt / elec.capacity_Q
    clamped = soc < 0.0 or soc > 1.0
    if clamped:
        logger.warning("SOC %.4f clamped to [0, 1]", soc)
    return SocUpdate(soc=min(1.0, max(0.0, soc)), clamped=clamped)


@dataclass
class LumpedModel:
    """State-space model ``(A, B, C, Mo, E)`` with grid metadata.

    ``C`` and ``E`` may be empty (zero sensors / zones) until a placement is
    attached with :meth:`with_sensors`.
    """

    A: np.ndarray
    B: np.ndarray
    grid: Grid
    params: ThermalParams
    geometry: CellGeometry
    C: np.ndarray = field(default=None)
    Mo: np.ndarray = field(default=None)
    E: np.ndarray = field(default=None)
    max_real_eig: float = float("nan")

    def __post_init__(self):
        n = self.grid.node_count
        if self.C is None:
            self.C = np.zeros((0, n))
        if self.Mo is None:
            self.Mo = np.eye(n)
        if self.E is None:
            self.E = np.zeros((n, 0))
        self.C = np.asarray(self.C, dtype=float)
        if self.C.size and not (
            np.all((self.C == 0) | (self.C == 1)) and np.all(self.C.sum(axis=1) == 1)
        ):
            raise ModelError("each row of C must contain exactly one 1")
        if math.isnan(self.max_real_eig):
            self.max_real_eig = float(np.max(np.linalg.eigvals(self.A).real))
        if not self.is_hurwitz:
            logger.warning("A is not Hurwitz: max Re(eig) = %.3e", self.max_real_eig)

    @property
    def n_states(self) -> int:
        return self.grid.node_count

    @property
    def is_hurwitz(self) -> bool:
        return self.max_real_eig < 0

    @property
    def sensor_nodes(self) -> list[int]:
        """1-based measured node of each sensor row."""
        return [int(np.argmax(row)) + 1 for row in self.C]

    def with_sensors(self, sensor_nodes, E=None) -> "LumpedModel":
        C = selection_matrix(sensor_nodes, self.n_states)
        return replace(self, C=C, E=self.E if E is None else np.asarray(E, float),
                       max_real_eig=self.max_real_eig)

    def with_params(self, params: ThermalParams) -> "LumpedModel":
        """Rebuild A and B for new thermal parameters, keeping C, Mo and E."""
        fresh = build_model(self.geometry, params, self.grid.nx, self.grid.ny)
        return replace(fresh, C=self.C, Mo=self.Mo, E=self.E)


def selection_matrix(sensor_nodes, n_states: int) -> np.ndarray:
    C = np.zeros((len(sensor_nodes), n_states))
    for row, node in enumerate(sensor_nodes):
        if not 1 <= node <= n_states:
            raise ModelError(f"sensor node {node} outside 1..{n_states}")
        C[row, node - 1] = 1.0
    return C


def build_model(geometry: CellGeometry, params: ThermalParams, nx: int, ny: int,
                Mo=None) -> LumpedModel:
    grid = build_grid(geometry, nx, ny)
    A = assemble_A(grid, params, geometry)
    B = assemble_B(grid, params, geometry)
    return LumpedModel(A=A, B=B, grid=grid, params=params, geometry=geometry, Mo=Mo)
