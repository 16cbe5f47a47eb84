"""
model_io.py

Model file persistence.
A model file is one JSON document: format version, architecture, training
metadata, all four networks with explicitly dimensioned arrays, a UTC
creation timestamp and a sha256 checksum. The checksum covers everything
except the timestamp and the checksum itself, so two runs with the same
configuration and seed produce identical checksums.
"""

import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pytz

from errors import ConfigurationError, ModelFileError, UsageError
from models import FORMAT_VERSION, ArchitectureSpec, TrainedPair
from nn_core import LayerParams, LayerSpec, Network


NETWORK_NAMES = ("encoder1", "decoder1", "encoder2", "decoder2")
UNHASHED_FIELDS = ("created_at", "checksum")

logger = logging.getLogger("ModelIO")


# -------------------------------------------------------------
# Encoding
# -------------------------------------------------------------

def _matrix_to_doc(matrix: np.ndarray) -> Dict[str, Any]:
    return {"rows": int(matrix.shape[0]), "cols": int(matrix.shape[1]),
            "data": [float(v) for v in matrix.ravel()]}


def _vector_to_doc(vector: np.ndarray) -> Dict[str, Any]:
    return {"length": int(vector.shape[0]), "data": [float(v) for v in vector]}


def _network_to_doc(network: Network) -> Dict[str, Any]:
    layers = []
    for spec, params in zip(network.layers, network.params):
        layer = {"kind": spec.kind, "in_width": spec.in_width, "out_width": spec.out_width,
                 "power_mode": spec.power_mode}
        if spec.kind == "dense":
            layer["weights"] = _matrix_to_doc(params.weights)
            layer["bias"] = _vector_to_doc(params.bias)
        if spec.kind == "batch_power_norm":
            layer["norm_running_scale"] = float(params.norm_running_scale)
            layer["norm_momentum"] = float(params.norm_momentum)
        layers.append(layer)
    return {"layers": layers}


def pair_to_document(pair: TrainedPair) -> Dict[str, Any]:
    """Serializable document for a pair, checksum and timestamp included."""
    arch = pair.arch
    document: Dict[str, Any] = {
        "format_version": pair.format_version,
        "arch": {"k": arch.k, "n": arch.n, "encoder_hidden": arch.encoder_hidden,
                 "decoder_hidden": arch.decoder_hidden, "power_mode": arch.power_mode},
        "model_kind": pair.model_kind,
        "train_alpha": float(pair.train_alpha),
        "train_snr_range_db": [float(v) for v in pair.train_snr_range_db],
        "seed": int(pair.seed),
        "trained": bool(pair.trained),
        "networks": {name: _network_to_doc(net) for name, net in pair.networks().items()},
    }
    document["created_at"] = datetime.now(pytz.utc).isoformat()
    document["checksum"] = document_checksum(document)
    return document


def document_checksum(document: Dict[str, Any]) -> str:
    """sha256 over the canonical JSON form of every field except the timestamp and checksum."""
    content = {key: value for key, value in document.items() if key not in UNHASHED_FIELDS}
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_model(pair: TrainedPair, path: Union[str, Path]) -> str:
    """
    Write the pair to path (temp file then rename). Returns the checksum.
    Raises:
        UsageError: untrained pair or non-finite parameters.
    """
    if not pair.trained:
        raise UsageError("Only trained pairs can be saved")
    if not pair.is_finite():
        logger.error("Refusing to save a pair with non-finite parameters")
        raise UsageError("Pair contains non-finite parameters")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = pair_to_document(pair)
    handle, tmp_name = tempfile.mkstemp(prefix=".model-", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(handle, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=1, allow_nan=False)
            f.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.info(f"Model saved to {path} ({document['checksum']})")
    return document["checksum"]


# -------------------------------------------------------------
# Decoding
# -------------------------------------------------------------

def _refuse(message: str, field: Optional[str] = None) -> ModelFileError:
    logger.error(f"Model file refused: {message}")
    return ModelFileError(message, field=field)


def _array_from_doc(doc: Dict[str, Any], field: str, matrix: bool) -> np.ndarray:
    data = np.asarray(doc["data"], dtype=np.float64)
    shape = (int(doc["rows"]), int(doc["cols"])) if matrix else (int(doc["length"]),)
    if data.size != int(np.prod(shape)):
        raise _refuse(f"{field}: declared shape {shape} but {data.size} values", field=field)
    if not np.all(np.isfinite(data)):
        raise _refuse(f"{field}: non-finite values", field=field)
    return data.reshape(shape)


def _network_from_doc(doc: Dict[str, Any], name: str) -> Network:
    layers, params = [], []
    for index, layer in enumerate(doc["layers"]):
        field = f"networks.{name}.layers[{index}]"
        spec = LayerSpec(layer["kind"], int(layer["in_width"]), int(layer["out_width"]),
                         power_mode=layer.get("power_mode", "batch_average"))
        param = LayerParams()
        if spec.kind == "dense":
            param.weights = _array_from_doc(layer["weights"], f"{field}.weights", matrix=True)
            param.bias = _array_from_doc(layer["bias"], f"{field}.bias", matrix=False)
        if spec.kind == "batch_power_norm":
            param.norm_running_scale = float(layer["norm_running_scale"])
            param.norm_momentum = float(layer["norm_momentum"])
        layers.append(spec)
        params.append(param)
    try:
        return Network(layers, params)
    except ConfigurationError as e:
        raise _refuse(f"networks.{name}: {e}", field=f"networks.{name}") from e


def pair_from_document(document: Dict[str, Any]) -> TrainedPair:
    """Rebuild a pair from a parsed document after version, checksum and shape checks."""
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise _refuse(f"Unknown format_version {version!r} (expected {FORMAT_VERSION})", field="format_version")
    try:
        expected = document_checksum(document)
    except ValueError as e:
        raise _refuse(f"Model document holds non-finite values: {e}", field="checksum") from e
    if document.get("checksum") != expected:
        raise _refuse("Checksum mismatch; file is corrupt or was edited", field="checksum")
    try:
        arch = ArchitectureSpec(**document["arch"])
        networks = {name: _network_from_doc(document["networks"][name], name) for name in NETWORK_NAMES}
        return TrainedPair(
            encoder1=networks["encoder1"], decoder1=networks["decoder1"],
            encoder2=networks["encoder2"], decoder2=networks["decoder2"],
            arch=arch,
            train_alpha=float(document["train_alpha"]),
            train_snr_range_db=tuple(float(v) for v in document["train_snr_range_db"]),
            seed=int(document["seed"]),
            model_kind=document["model_kind"],
            format_version=version,
            trained=bool(document["trained"]),
        )
    except ModelFileError:
        raise
    except ConfigurationError as e:
        raise _refuse(f"Inconsistent model: {e}", field=e.key) from e
    except (KeyError, TypeError, ValueError) as e:
        raise _refuse(f"Malformed model document: {e!r}") from e


def load_model(path: Union[str, Path]) -> TrainedPair:
    """
    Read a model file. Nothing is returned unless every check passes.
    Raises:
        ModelFileError: missing, truncated, corrupt, unknown version or inconsistent shapes.
    """
    path = Path(path)
    if not path.is_file():
        raise _refuse(f"Model file not found: {path}", field="path")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise _refuse(f"{path} is truncated or not a model document; checksum cannot be verified",
                      field="checksum") from e
    if not isinstance(document, dict):
        raise _refuse(f"{path} is not a model document", field="checksum")
    pair = pair_from_document(document)
    logger.info(f"Loaded {pair.model_kind} pair (alpha={pair.train_alpha}) from {path}")
    return pair


def read_checksum(path: Union[str, Path]) -> str:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))["checksum"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise _refuse(f"Cannot read checksum from {path}: {e}", field="checksum") from e
