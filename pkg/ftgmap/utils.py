#!/usr/bin/env python3

################################################
#
#   Shared helpers for artifacts: JSON and CSV
#   writers, format versions, seed derivation
#
################################################

################################################
#   Libraries
################################################
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from packaging import version


JsonObject = Dict[str, Any]
PathLike = Union[str, Path]

# Version written into every JSON artifact
FORMAT_VERSION = "1.0.0"

# Lossless, platform independent float formatting for CSV artifacts
CSV_FLOAT_FORMAT = "%.17g"

# Stage labels used to derive independent seeds from one run seed
SEED_STAGES = ("data", "map", "sampler", "pilot")


################################################
#   Functions
################################################
def derive_seeds(seed):
    """Derive one independent integer seed per pipeline stage.

    :param seed: Run seed
    :type seed: int
    :return: Stage label to seed
    :rtype: dict
    """
    children = np.random.SeedSequence(int(seed)).spawn(len(SEED_STAGES))
    return {
        label: int(child.generate_state(1, dtype=np.uint32)[0])
        for label, child in zip(SEED_STAGES, children)
    }


def to_jsonable(value):
    """Convert numpy containers and scalars to plain python types."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    return value


def write_json(document, path):
    """Write a JSON artifact with sorted keys so reruns are byte identical.

    :param document: JSON serializable mapping, numpy values allowed
    :type document: dict
    :param path: Output file
    :type path: str or Path
    :return: Written path
    :rtype: Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(to_jsonable(document), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def stamp_version(document):
    """Return a copy of document carrying the current format version."""
    stamped = dict(document)
    stamped["format_version"] = FORMAT_VERSION
    return stamped


def check_format_version(document, kind):
    """Refuse artifacts written by an incompatible (newer major) format.

    :param document: Parsed JSON artifact
    :type document: dict
    :param kind: Artifact name used in error messages
    :type kind: str
    :raises ValueError: If the version is missing or not readable
    """
    found = document.get("format_version")
    if found is None:
        raise ValueError(f"{kind} validation error, missing format_version")
    if version.parse(found).major > version.parse(FORMAT_VERSION).major:
        raise ValueError(
            f"{kind} validation error, format_version {found} is newer than "
            f"supported {FORMAT_VERSION}"
        )


def write_matrix_csv(matrix, path, header=None):
    """Write a 1D or 2D array as comma separated values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.atleast_1d(np.asarray(matrix, dtype=float))
    if array.ndim == 1:
        array = array[:, None]
    np.savetxt(
        path, array, delimiter=",", fmt=CSV_FLOAT_FORMAT, header=header or "", comments="# "
    )
    return path


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def write_columns_csv(columns, path):
    """Write named columns of equal length with a header row.

    :param columns: Ordered mapping column name -> sequence
    :type columns: dict
    """
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, delimiter=",", fmt=CSV_FLOAT_FORMAT, header=",".join(names), comments="")
    return path


def sha256sum(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
