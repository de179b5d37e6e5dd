"""File formats of the pipeline: scenes, fields CSV, axis JSON, trajectories, metrics and traces."""

import json
import logging
from io import BytesIO
from pathlib import Path

import numpy as np
import pandas as pd

import config
from errors import FieldsFormatError
from estimation import AxisEstimate
from fields import DenseFields
from scene import JointType, Observation, parse_scene, serialize_scene

logger = logging.getLogger(__name__)

SCENE_SUFFIX = ".urdf"


def load_scene(path, strict=True):
    return parse_scene(Path(path).read_text(encoding="utf-8"), strict=strict)


def save_scene(path, scene):
    Path(path).write_text(serialize_scene(scene), encoding="utf-8")


def load_scene_dir(directory, strict=True):
    """
    Load every scene file in a directory, sorted by file name.

    Raises:
        FileNotFoundError: If the directory holds no scene files
    """
    paths = sorted(Path(directory).glob(f"*{SCENE_SUFFIX}"))
    if not paths:
        raise FileNotFoundError(f"no {SCENE_SUFFIX} scene files in {directory}")
    return [load_scene(p, strict=strict) for p in paths]


def write_fields_csv(path, obs, fields):
    """
    Write an observation and its fields in the fields CSV format.

    The idx column holds each point's index in the scene's closed-state cloud.
    Floats are written with 17 significant digits so reading them back is exact.
    """
    data = pd.DataFrame(
        {
            "idx": obs.point_index,
            "x": obs.points[:, 0], "y": obs.points[:, 1], "z": obs.points[:, 2],
            "fx": fields.flow[:, 0], "fy": fields.flow[:, 1], "fz": fields.flow[:, 2],
            "rx": fields.projection[:, 0], "ry": fields.projection[:, 1], "rz": fields.projection[:, 2],
            "mask": fields.mask.astype(int),
        },
        columns=config.FIELDS_HEADER,
    )
    data.to_csv(path, index=False, float_format=config.FLOAT_FORMAT)


def _first_bad_row(series):
    """Zero-based position of the first non-numeric or missing entry, or None."""
    numeric = pd.to_numeric(series, errors="coerce")
    bad = np.flatnonzero(numeric.isna().to_numpy())
    return int(bad[0]) if len(bad) else None


def read_fields_csv(path, expected_count=None):
    """
    Read a fields CSV back into an Observation and DenseFields.

    Args:
        path: CSV file in the fields format
        expected_count: Required number of rows, or None to accept any

    Returns:
        tuple: (Observation, DenseFields); config_q is NaN because the file
        does not record it

    Raises:
        FieldsFormatError: Wrong header, malformed row (message gives the file
        line number) or row-count mismatch
    """
    try:
        data = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    except pd.errors.EmptyDataError:
        raise FieldsFormatError(f"{path}: empty file, expected header {','.join(config.FIELDS_HEADER)}")
    except pd.errors.ParserError as e:
        raise FieldsFormatError(f"{path}: malformed CSV: {e}")

    if list(data.columns) != config.FIELDS_HEADER:
        raise FieldsFormatError(
            f"{path}: unexpected header {','.join(map(str, data.columns))}; "
            f"expected {','.join(config.FIELDS_HEADER)}"
        )
    if data.empty:
        raise FieldsFormatError(f"{path}: no rows")

    for column in config.FIELDS_HEADER:
        row = _first_bad_row(data[column])
        if row is not None:
            # line 1 is the header
            raise FieldsFormatError(f"{path}: line {row + 2}: column '{column}' is not a number")
    data = data.apply(pd.to_numeric)

    checks = {
        "mask": (lambda v: ~np.isin(v, [0, 1]), "must be 0 or 1"),
        "idx": (lambda v: (v < 0) | (v != np.round(v)), "must be a non-negative integer"),
    }
    for column, (is_invalid, what) in checks.items():
        values = data[column].to_numpy()
        invalid = is_invalid(values)
        if invalid.any():
            row = int(np.flatnonzero(invalid)[0])
            raise FieldsFormatError(f"{path}: line {row + 2}: {column} {what}, got {values[row]}")

    if expected_count is not None and len(data) != expected_count:
        raise FieldsFormatError(f"{path}: expected {expected_count} rows, found {len(data)}")

    mask = data["mask"].to_numpy() == 1
    obs = Observation(
        points=data[["x", "y", "z"]].to_numpy(),
        mask=mask,
        source_part=np.where(mask, "target", "other"),
        config_q=float("nan"),
        point_index=data["idx"].to_numpy().astype(int),
    )
    fields = DenseFields(data[["fx", "fy", "fz"]].to_numpy(), data[["rx", "ry", "rz"]].to_numpy(), mask)
    logger.debug("read %d points (%d masked) from %s", len(obs), obs.masked_count, path)
    return obs, fields


def axis_to_dict(estimate):
    return {
        "type": str(estimate.articulation_type),
        "omega": list(estimate.direction),
        "origin": list(estimate.origin),
        "support": int(estimate.support_count),
    }


def write_axis_json(path, estimate):
    Path(path).write_text(json.dumps(axis_to_dict(estimate), indent=2) + "\n", encoding="utf-8")


def read_axis_json(path):
    """
    Read an axis estimate JSON file.

    Raises:
        FieldsFormatError: Missing keys or wrongly shaped vectors
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        estimate = AxisEstimate(
            direction=tuple(float(c) for c in payload["omega"]),
            origin=tuple(float(c) for c in payload["origin"]),
            articulation_type=JointType(payload["type"]),
            support_count=int(payload["support"]),
        )
    except json.JSONDecodeError as e:
        raise FieldsFormatError(f"{path}: invalid JSON: {e}")
    except KeyError as e:
        raise FieldsFormatError(f"{path}: missing key {e}")
    except (TypeError, ValueError) as e:
        raise FieldsFormatError(f"{path}: invalid axis estimate: {e}")
    if len(estimate.direction) != 3 or len(estimate.origin) != 3:
        raise FieldsFormatError(f"{path}: omega and origin must have 3 components")
    return estimate


def trajectory_frame(plan):
    quats = plan.quaternions()
    data = pd.DataFrame(
        {
            "step": np.arange(len(plan.waypoints)),
            "x": plan.waypoints[:, 0], "y": plan.waypoints[:, 1], "z": plan.waypoints[:, 2],
            "qw": quats[:, 0], "qx": quats[:, 1], "qy": quats[:, 2], "qz": quats[:, 3],
        }
    )
    return data[config.TRAJECTORY_HEADER]


def write_trajectory_csv(path, plan):
    trajectory_frame(plan).to_csv(path, index=False, float_format=config.FLOAT_FORMAT)


def write_metrics_csv(path, metrics):
    """Write the metrics table with exactly the metrics header columns."""
    metrics[config.METRICS_HEADER].to_csv(path, index=False, float_format=config.FLOAT_FORMAT)


def write_trace_csv(path, trace):
    trace[config.TRACE_HEADER].to_csv(path, index=False, float_format=config.FLOAT_FORMAT)


def save_workbook(sheets, path=None):
    """
    Save several tables as sheets of one Excel workbook.

    Args:
        sheets: Mapping of sheet name to DataFrame
        path: Output file, or None to return the workbook in memory

    Returns:
        BytesIO when path is None, otherwise None
    """
    target = BytesIO() if path is None else path
    with pd.ExcelWriter(target, engine="openpyxl") as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name[:31], index=False)
    if path is None:
        target.seek(0)
        return target
    return None
