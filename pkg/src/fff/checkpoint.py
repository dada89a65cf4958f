"""JSON checkpoints for encoder/decoder pairs.

Floats are written with ``repr`` (shortest round-trip form, at most 17
significant digits), so save then load reproduces every parameter bit for bit.
"""
import json
import os
import tempfile

import numpy as np

from . import nn
from .errors import FFFError
from .likelihood import ModelPair

FORMAT = "fff-checkpoint/1"


class CheckpointError(FFFError):
    pass


def _layers(params):
    out = []
    for i in range(params.spec.n_layers):
        b = params.bias(i)
        out.append({
            "weight": params.weight(i).tolist(),
            "bias": None if b is None else b.tolist(),
        })
    return out


def _restore(spec_dict, layers):
    spec = nn.NetworkSpec.from_dict(spec_dict)
    params = nn.ParamStore(spec)
    if len(layers) != spec.n_layers:
        raise CheckpointError(f"expected {spec.n_layers} layers, found {len(layers)}")
    for i, layer in enumerate(layers):
        w = np.asarray(layer["weight"], dtype=np.float64)
        if w.shape != params.weight(i).shape:
            raise CheckpointError(f"layer {i} weight has shape {w.shape}")
        params.weight(i)[...] = w
        if params.bias(i) is not None:
            params.bias(i)[...] = np.asarray(layer["bias"], dtype=np.float64)
    return params


def to_dict(model, metadata=None):
    doc = {
        "format": FORMAT,
        "spec": {"encoder": model.encoder.spec.to_dict(),
                 "decoder": None if model.decoder is None else model.decoder.spec.to_dict()},
        "params": {"encoder": _layers(model.encoder),
                   "decoder": None if model.decoder is None else _layers(model.decoder)},
        "metadata": {"seed": None, "beta": None, "step": None, "dataset_id": None},
    }
    doc["metadata"].update(metadata or {})
    return doc


def from_dict(doc):
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"unknown checkpoint format {doc.get('format')!r}")
    enc = _restore(doc["spec"]["encoder"], doc["params"]["encoder"])
    dec = None
    if doc["spec"].get("decoder") is not None:
        dec = _restore(doc["spec"]["decoder"], doc["params"]["decoder"])
    return ModelPair(enc, dec), doc.get("metadata", {})


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory and rename into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, model, metadata=None):
    atomic_write_text(path, json.dumps(to_dict(model, metadata), indent=1) + "\n")


def load(path):
    """Returns ``(ModelPair, metadata)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        return from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
