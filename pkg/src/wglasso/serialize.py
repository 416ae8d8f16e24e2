"""File formats: JSON documents, the lead-field binary, and the rows CSV.

Every document embeds the configuration and seeds that produced it so a run
can be replayed from its own output.  JSON is dumped with sorted keys and a
fixed layout, and CSV floats use ``repr`` (shortest round-trip form), so
repeated runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import LeadField, SolveResult
from .forward import HeadGeometry
from .metrics import ExperimentReport

__all__ = [
    "dumps",
    "write_json",
    "read_json",
    "geometry_document",
    "write_lead_field",
    "read_lead_field",
    "write_experiment_csv",
    "solve_result_document",
]

LEAD_FIELD_DTYPE = "<f8"  # row-major 64-bit little-endian floats


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def geometry_document(
    geometry_true: HeadGeometry,
    geometry_inverse: HeadGeometry,
    config: dict,
    seed: int,
    grid_seeds: dict,
) -> dict:
    """Replayable record of the montage and both source grids."""
    return {
        "config": config,
        "seed": seed,
        "grid_seeds": grid_seeds,
        "scalp_radius_mm": geometry_true.scalp_radius,
        "conductivity_s_per_mm": geometry_true.conductivity,
        "electrode_positions_mm": geometry_true.electrode_positions.tolist(),
        "true_grid_mm": geometry_true.source_positions.tolist(),
        "inverse_grid_mm": geometry_inverse.source_positions.tolist(),
        "min_separation_mm": geometry_true.min_separation,
    }


def write_lead_field(base_path, lead_field: LeadField, config: dict | None = None):
    """Write ``<base>.bin`` (row-major float64 LE) plus a ``<base>.json`` header."""
    base = Path(base_path)
    arr = np.ascontiguousarray(lead_field.entries, dtype=LEAD_FIELD_DTYPE)
    bin_path = base.with_suffix(".bin")
    bin_path.write_bytes(arr.tobytes(order="C"))
    header = {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "layout": lead_field.column_layout,
        "dtype": LEAD_FIELD_DTYPE,
        "order": "C",
    }
    if config is not None:
        header["config"] = config
    write_json(base.with_suffix(".json"), header)
    return bin_path, base.with_suffix(".json")


def read_lead_field(base_path) -> LeadField:
    base = Path(base_path)
    header = read_json(base.with_suffix(".json"))
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype=header["dtype"])
    entries = raw.reshape(header["rows"], header["cols"])
    return LeadField(entries=entries, column_layout=header["layout"])


def solve_result_document(
    result: SolveResult,
    config: dict,
    seed: int,
    weighting: dict,
    selection: dict | None = None,
) -> dict:
    return {
        "config": config,
        "seed": seed,
        "weighting": weighting,
        "morozov": selection,
        "result": result.to_dict(),
    }


def write_experiment_csv(report: ExperimentReport, path) -> Path:
    path = Path(path)
    path.write_text("\n".join(report.csv_lines()) + "\n")
    return path
