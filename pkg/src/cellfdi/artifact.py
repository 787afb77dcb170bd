"""Versioned ``.npz`` container for a built model.

Layout (format version 1):

===============  =====================================================
key              content
===============  =====================================================
format_version   int, currently 1
A, B, C, Mo, E   model matrices, float64, stored as-is
grid             [nx, ny, dx, dy]
param_keys       parameter-file keys, unicode array
param_values     matching float64 values (the full cell configuration)
max_real_eig     float64, largest eigenvalue real part of A
===============  =====================================================

Matrices are written without any transformation, so a reload reproduces
them bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .params import CellConfig, config_from_values
from .thermal import Grid, LumpedModel

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def save_model(path: str | Path, model: LumpedModel, config: CellConfig) -> Path:
    path = Path(path)
    values = config.as_dict()
    values["nx"], values["ny"] = model.grid.nx, model.grid.ny
    keys = sorted(k for k, v in values.items() if v is not None)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(FORMAT_VERSION),
            A=model.A, B=model.B, C=model.C, Mo=model.Mo, E=model.E,
            grid=np.array([model.grid.nx, model.grid.ny, model.grid.dx, model.grid.dy], dtype=float),
            param_keys=np.array(keys),
            param_values=np.array([float(values[k]) for k in keys]),
            max_real_eig=np.array(model.max_real_eig),
        )
    return path


def load_model(path: str | Path) -> tuple[LumpedModel, CellConfig]:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"{path}: not a model artifact ({exc})") from exc
    with data:
        if "format_version" not in data:
            raise ArtifactError(f"{path}: missing format_version")
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ArtifactError(f"{path}: unsupported format version {version}")
        values = dict(zip(data["param_keys"].tolist(), data["param_values"].tolist()))
        config = config_from_values(values, source=str(path))
        nx, ny, dx, dy = data["grid"].tolist()
        grid = Grid(int(nx), int(ny), dx, dy)
        model = LumpedModel(
            A=data["A"], B=data["B"], grid=grid, params=config.thermal,
            geometry=config.geometry, C=data["C"], Mo=data["Mo"], E=data["E"],
            max_real_eig=float(data["max_real_eig"]),
        )
    return model, config
