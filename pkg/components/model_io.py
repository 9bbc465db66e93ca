"""Model files: a magic line, one JSON header line, then raw little-endian float64.

The header carries the full ModelSpec, the parameter layout, the blank id
and the SHA-256 of the canonical spec JSON. Loading recomputes the hash and
refuses files whose spec was edited after saving.
"""

import json
import os
import sys
from pathlib import Path
from typing import Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.network import empty_parameters
from components.network_layers import Parameters
from config.app_config import AppConfig
from config.settings import ModelSpec
from utils.errors import FormatVersionError, MissingModelError, ShapeMismatchError, SpecHashMismatchError

_DTYPE = "<f8"


def save_model(path, spec: ModelSpec, params: Parameters) -> Path:
    path = Path(path)
    header = {
        "version": AppConfig.MODEL_FORMAT_VERSION,
        "spec": spec.model_dump(mode="json"),
        "spec_sha256": spec.spec_hash(),
        "blank_id": spec.blank_id,
        "layout": [[name, list(shape)] for name, shape in params.shapes()],
        "count": params.size,
        "dtype": _DTYPE,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(f"{AppConfig.MODEL_MAGIC} v{AppConfig.MODEL_FORMAT_VERSION}\n".encode("ascii"))
        handle.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        handle.write(params.vector.astype(_DTYPE).tobytes())
    return path


def load_model(path) -> Tuple[ModelSpec, Parameters]:
    path = Path(path)
    if not path.exists():
        raise MissingModelError(f"model file {path} does not exist")
    with open(path, "rb") as handle:
        magic = handle.readline().decode("ascii", errors="replace").rstrip("\n")
        header_line = handle.readline()
        payload = handle.read()

    name, _, version = magic.partition(" v")
    if name != AppConfig.MODEL_MAGIC:
        raise FormatVersionError(f"{path} is not a model file")
    if version != str(AppConfig.MODEL_FORMAT_VERSION):
        raise FormatVersionError(f"unsupported model file version {version!r}")

    header = json.loads(header_line.decode("utf-8"))
    spec = ModelSpec.model_validate(header["spec"])
    if spec.spec_hash() != header["spec_sha256"]:
        raise SpecHashMismatchError(f"{path}: model spec does not match its recorded hash")

    vector = np.frombuffer(payload, dtype=_DTYPE).astype(np.float64)
    if vector.size != header["count"]:
        raise ShapeMismatchError(f"{path}: expected {header['count']} parameters, found {vector.size}")
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    expected = empty_parameters(spec).shapes()
    if layout != expected:
        raise ShapeMismatchError(f"{path}: parameter layout does not match the model spec")
    return spec, Parameters(layout, vector)
