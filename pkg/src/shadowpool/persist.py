"""CSV datasets and directory checkpoints.

A checkpoint is a directory holding ``manifest.json`` plus one raw
little-endian tensor file per array (``<f8`` for parameters, ``<i8`` for
index arrays). The manifest records the format version, the array shapes
and dtypes, and a free-form ``meta`` mapping (seeds, config echo, ...).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .data import Dataset
from .exceptions import FormatVersionError, ParseError

FORMAT_NAME = "shadowpool-checkpoint"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Columns ``id, f0..f{d-1}, label[, property]``; floats written with ``repr``."""
    path = Path(path)
    header = ["id"] + [f"f{j}" for j in range(dataset.dim)] + ["label"]
    has_prop = dataset.property_flags is not None
    if has_prop:
        header.append("property")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(dataset)):
            row = [str(int(dataset.ids[i]))]
            row.extend(repr(float(v)) for v in dataset.features[i])
            row.append(str(int(dataset.labels[i])))
            if has_prop:
                row.append(str(int(dataset.property_flags[i])))
            w.writerow(row)


def load_dataset_csv(path, n_classes: int = None) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty dataset file", line=1) from None
        feat_cols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
        if "label" not in header or not feat_cols:
            raise ParseError("header must name feature columns f0.. and 'label'", line=1)
        has_id = "id" in header
        has_prop = "property" in header
        col = {name: k for k, name in enumerate(header)}
        feats, labels, ids, props = [], [], [], []
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
            try:
                field = None
                vals = []
                for name in feat_cols:
                    field = name
                    vals.append(float(row[col[name]]))
                field = "label"
                labels.append(int(row[col["label"]]))
                if has_id:
                    field = "id"
                    ids.append(int(row[col["id"]]))
                if has_prop:
                    field = "property"
                    props.append(int(row[col["property"]]))
            except ValueError:
                raise ParseError("malformed value", line=line, field=field) from None
            feats.append(vals)
    if not feats:
        raise ParseError("dataset file has a header but no rows", line=2)
    return Dataset(np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64),
                   np.array(ids, dtype=np.int64) if has_id else None,
                   np.array(props, dtype=np.int64) if has_prop else None, n_classes)


def save_checkpoint(directory, kind: str, tensors: dict, meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        fname = f"{name}.bin"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        (directory / fname).write_bytes(data.tobytes())
        entries[name] = {"file": fname, "dtype": code, "shape": list(arr.shape),
                         "sha256": hashlib.sha256(data.tobytes()).hexdigest()}
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind,
                "tensors": entries, "meta": meta}
    tmp = directory / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, directory / MANIFEST)
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ParseError(f"no manifest in {directory}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest: {exc.msg}", line=exc.lineno) from None
    if manifest.get("format") != FORMAT_NAME:
        raise ParseError("not a checkpoint manifest", field="format")
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"checkpoint format version {manifest.get('version')} unsupported (expected {FORMAT_VERSION})",
            field="version")
    return manifest


def load_checkpoint(directory, kind: str = None) -> tuple[dict, dict]:
    """Return ``(meta, tensors)``; ``kind`` is checked when given."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if kind is not None and manifest.get("kind") != kind:
        raise ParseError(f"checkpoint holds {manifest.get('kind')!r}, expected {kind!r}", field="kind")
    tensors = {}
    for name, entry in manifest["tensors"].items():
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(entry["shape"])
            raw = (directory / entry["file"]).read_bytes()
        except (KeyError, TypeError):
            raise ParseError("incomplete tensor entry", field=name) from None
        except OSError as exc:
            raise ParseError(f"cannot read tensor file: {exc.strerror}", field=name) from None
        expected = int(np.prod(shape, dtype=np.int64)) * 8
        if len(raw) != expected:
            raise ParseError(f"tensor file holds {len(raw)} bytes, expected {expected}", field=name)
        if "sha256" in entry and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise ParseError("tensor checksum mismatch", field=name)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype[1:], copy=True)
    return manifest["meta"], tensors


def _ledger_meta(ledger) -> dict:
    return {rid: ledger.get(rid) for rid in ledger.run_ids()}


def _ledger_from_meta(runs: dict):
    from .cost import CostLedger

    ledger = CostLedger()
    for rid, vals in runs.items():
        ledger.record(rid, vals["forward"], vals["backward"], vals["updates"])
        ledger._run(rid)["wallclock_s"] = float(vals["wallclock_s"])
    return ledger


def _layer_tensors(layers, prefix) -> dict:
    out = {}
    for i, layer in enumerate(layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def _layers_from(tensors, prefix, activations):
    from .nn import LinearLayer

    return [LinearLayer(tensors[f"{prefix}.{i}.weight"], tensors[f"{prefix}.{i}.bias"], act)
            for i, act in enumerate(activations)]


def save_shadow_model(model, directory, meta: dict = None) -> Path:
    """Weights, training ids, hyper-parameters and cost counters of a fitted model."""
    tensors = _layer_tensors(model.layers_, "layer")
    tensors["train_ids"] = model.train_ids_
    info = {"params": _jsonable(model.get_params()), "n_classes": int(model.n_classes_),
            "activations": [layer.activation for layer in model.layers_],
            "name": getattr(model, "name_", None), "ledger": _ledger_meta(model.ledger_),
            "extra": meta or {}}
    return save_checkpoint(directory, "shadow-model", tensors, info)


def load_shadow_model(directory):
    from .shadow import ShadowModel

    meta, tensors = load_checkpoint(directory, "shadow-model")
    params = dict(meta["params"])
    params["stem_widths"] = tuple(params["stem_widths"])
    params.pop("n_classes", None)
    model = ShadowModel.from_layers(_layers_from(tensors, "layer", meta["activations"]),
                                    meta["n_classes"], **params)
    model.train_ids_ = tensors["train_ids"]
    model.ledger_ = _ledger_from_meta(meta["ledger"])
    if meta.get("name"):
        model.name_ = meta["name"]
    return model


def save_pool(pool, directory, meta: dict = None) -> Path:
    """Full pool state: weights, mapping, aligned set and fine-tuning exposure."""
    tensors = _layer_tensors(pool.stem_, "stem")
    tensors.update(_layer_tensors(pool.head_, "head"))
    for l, row in enumerate(pool.experts_):
        tensors.update(_layer_tensors(row, f"expert.{l}"))
    info = {"params": _jsonable(pool.get_params()), "architecture": pool.architecture_.to_dict(),
            "aligned_set": pool.aligned_set_, "property_trained": bool(pool.property_trained_),
            "ledger": _ledger_meta(pool.ledger_), "extra": meta or {}}
    if pool.mapping_ is not None:
        tensors["mapping.ids"] = pool.mapping_.ids
        tensors["mapping.assignment"] = pool.mapping_.assignment
        tensors["train_ids"] = pool.train_ids_
    if pool.dq_ids_ is not None:
        tensors["dq_ids"] = pool.dq_ids_
        order = list(pool.dq_exposure_)
        info["exposure_pathways"] = order
        tensors["exposure.sizes"] = np.array([pool.dq_exposure_[w].size for w in order], dtype=np.int64)
        tensors["exposure.ids"] = (np.concatenate([pool.dq_exposure_[w] for w in order])
                                   if order else np.empty(0, dtype=np.int64))
    return save_checkpoint(directory, "shadow-pool", tensors, info)


def load_pool(directory):
    from .data import MappingMatrix
    from .nn import IDENTITY, RELU
    from .pool import PoolArchitecture, ShadowPool

    meta, tensors = load_checkpoint(directory, "shadow-pool")
    params = dict(meta["params"])
    params["stem_widths"] = tuple(params["stem_widths"])
    pool = ShadowPool(**params)
    arch = PoolArchitecture.from_dict(meta["architecture"])
    pool.initialize(arch.input_dim, arch.n_classes)
    pool.stem_ = _layers_from(tensors, "stem", [RELU] * len(arch.stem_widths))
    pool.head_ = _layers_from(tensors, "head", [IDENTITY])
    pool.experts_ = [_layers_from(tensors, f"expert.{l}", [RELU] * arch.n_experts)
                     for l in range(arch.n_layers)]
    if "mapping.ids" in tensors:
        pool.mapping_ = MappingMatrix(tensors["mapping.ids"], tensors["mapping.assignment"],
                                      arch.n_pathways)
        pool.train_ids_ = tensors["train_ids"]
    pool.aligned_set_ = meta["aligned_set"]
    if "dq_ids" in tensors:
        pool.dq_ids_ = tensors["dq_ids"]
        bounds = np.cumsum(np.r_[0, tensors["exposure.sizes"]])
        pool.dq_exposure_ = {int(w): tensors["exposure.ids"][bounds[k]:bounds[k + 1]]
                             for k, w in enumerate(meta["exposure_pathways"])}
    pool.property_trained_ = meta["property_trained"]
    pool.ledger_ = _ledger_from_meta(meta["ledger"])
    return pool


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
