"""Parameter file loading.

Parameter files are plain text, one ``key = value`` pair per line, ``#``
starts a comment.  Keys follow the model's symbol names:

=============  ==================================  ==========
key            meaning                             unit
=============  ==================================  ==========
M              cell length (x axis)                m
N              cell breadth (y axis)               m
p              cell depth                          m
As             cell area (default M*N)             m^2
rho            average density                     kg/m^3
Cp             average specific heat capacity      J/(kg K)
k              average thermal conductivity        W/(m K)
h_o            effective heat transfer coeff.      W/(m^2 K)
gamma_x0       boundary coefficient at x = 0       1/m
gamma_M        boundary coefficient at x = M       1/m
gamma_y0       boundary coefficient at y = 0       1/m
gamma_N        boundary coefficient at y = N       1/m
theta_amb      ambient temperature                 K
Gamma          entropic heat coefficient           V/K
Q              capacity                            A s
R_int          internal resistance                 ohm
ocv_empty      OCV at SOC 0                        V
ocv_full       OCV at SOC 1                        V
soc0           initial SOC                         -
nx, ny         default grid (nodes along x and y)  -
=============  ==================================  ==========
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .thermal import (
    CellGeometry,
    ElectricalState,
    LumpedModel,
    ModelError,
    ThermalParams,
    affine_ocv,
    build_model,
)

KEYS = {
    "M", "N", "p", "As", "rho", "Cp", "k", "h_o", "gamma_x0", "gamma_M",
    "gamma_y0", "gamma_N", "theta_amb", "Gamma", "Q", "R_int", "ocv_empty",
    "ocv_full", "soc0", "nx", "ny",
}
REQUIRED = {"M", "N", "p", "rho", "Cp", "k", "h_o", "gamma_x0", "gamma_M", "gamma_y0", "gamma_N"}


class ParamFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class CellConfig:
    """Everything a parameter file defines."""

    geometry: CellGeometry
    thermal: ThermalParams
    capacity_Q: float = 36000.0
    internal_resistance: float = 0.002
    ocv_empty: float = 2.75
    ocv_full: float = 4.2
    soc0: float = 1.0
    nx: int = 4
    ny: int = 6

    def ocv(self):
        return affine_ocv(self.ocv_empty, self.ocv_full)

    def electrical(self, current: float = 0.0, soc: float | None = None) -> ElectricalState:
        return ElectricalState(
            soc=self.soc0 if soc is None else soc,
            capacity_Q=self.capacity_Q,
            applied_current_Ja=current,
            ocv_curve=self.ocv(),
            internal_resistance=self.internal_resistance,
        )

    def build(self, nx: int | None = None, ny: int | None = None) -> LumpedModel:
        return build_model(self.geometry, self.thermal, nx or self.nx, ny or self.ny)

    def as_dict(self) -> dict[str, float]:
        g, t = self.geometry, self.thermal
        return {
            "M": g.length_M, "N": g.breadth_N, "p": g.depth_p, "As": g.surface_area_As,
            "rho": t.density_rho, "Cp": t.heat_capacity_Cp, "k": t.conductivity_k,
            "h_o": t.h_transfer_ho, "gamma_x0": t.gamma_x0, "gamma_M": t.gamma_M,
            "gamma_y0": t.gamma_y0, "gamma_N": t.gamma_N, "theta_amb": t.theta_ambient,
            "Gamma": t.entropic_Gamma, "Q": self.capacity_Q, "R_int": self.internal_resistance,
            "ocv_empty": self.ocv_empty, "ocv_full": self.ocv_full, "soc0": self.soc0,
            "nx": self.nx, "ny": self.ny,
        }


def parse_params(text: str, source: str | None = None) -> CellConfig:
    values: dict[str, float] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamFileError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in KEYS:
            raise ParamFileError(f"unknown key {key!r}", lineno, source)
        if key in values:
            raise ParamFileError(f"duplicate key {key!r}", lineno, source)
        try:
            values[key] = float(value)
        except ValueError:
            raise ParamFileError(f"value for {key!r} is not a number: {value!r}", lineno, source)
        lines[key] = lineno
    missing = REQUIRED - values.keys()
    if missing:
        raise ParamFileError(f"missing required keys: {', '.join(sorted(missing))}", None, source)
    return config_from_values(values, lines, source)


def config_from_values(values: dict, lines: dict | None = None, source: str | None = None) -> CellConfig:
    lines = lines or {}

    def check(cond, key, msg):
        if not cond:
            raise ParamFileError(f"{key}: {msg}", lines.get(key), source)

    for key in ("M", "N", "p", "rho", "Cp", "k", "Q"):
        if key in values:
            check(values[key] > 0, key, f"must be positive, got {values[key]}")
    check(values.get("h_o", 0.0) >= 0, "h_o", "must be non-negative")
    for key in ("nx", "ny"):
        if key in values:
            check(values[key] >= 1 and float(values[key]).is_integer(), key, "must be an integer >= 1")
    try:
        geometry = CellGeometry(
            length_M=values["M"], breadth_N=values["N"], depth_p=values["p"],
            surface_area_As=values.get("As"),
        )
        thermal = ThermalParams(
            density_rho=values["rho"], heat_capacity_Cp=values["Cp"],
            conductivity_k=values["k"], h_transfer_ho=values["h_o"],
            gamma_x0=values["gamma_x0"], gamma_M=values["gamma_M"],
            gamma_y0=values["gamma_y0"], gamma_N=values["gamma_N"],
            theta_ambient=values.get("theta_amb", 298.15),
            entropic_Gamma=values.get("Gamma", 0.0),
        )
    except ModelError as exc:
        raise ParamFileError(str(exc), None, source) from exc
    return CellConfig(
        geometry=geometry,
        thermal=thermal,
        capacity_Q=values.get("Q", 36000.0),
        internal_resistance=values.get("R_int", 0.002),
        ocv_empty=values.get("ocv_empty", 2.75),
        ocv_full=values.get("ocv_full", 4.2),
        soc0=values.get("soc0", 1.0),
        nx=int(values.get("nx", 4)),
        ny=int(values.get("ny", 6)),
    )


def load_params(path: str | Path) -> CellConfig:
    path = Path(path)
    return parse_params(path.read_text(), source=str(path))


def default_params_text() -> str:
    return resources.files("cellfdi.data").joinpath("default_params.txt").read_text()


def default_config() -> CellConfig:
    return parse_params(default_params_text(), source="default_params.txt")
