"""Versioned binary model container (``HTSV``).

Layout, little-endian throughout::

    magic "HTSV" | u32 version | u32 n_sections
    per section: u16 name_len | name | u64 payload_len | u32 crc32 | payload
    payload:     u32 n_entries, then per entry
                 u16 key_len | key | u8 kind | u8 ndim | u64 dims[ndim] | data

``kind`` is ``f`` (float64), ``i`` (int64) or ``s`` (utf-8 text, ndim 0,
one u64 length). Every payload carries its own CRC32 so damage is reported
against the section it hit.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
from sklearn.preprocessing import StandardScaler

from .cnn import ShallowCNN
from .errors import ContainerIntegrityError
from .htsvm import HTSVMClassifier, load_taxonomy
from .mlp import MLPBaseline
from .svm import BinarySVC, BinarySvmModel, KernelParams, OneVsOneSVC

MAGIC = b"HTSV"
VERSION = 1


# -- raw sections ------------------------------------------------------------

def _pack_entry(key: str, value) -> bytes:
    kb = key.encode()
    head = struct.pack("<H", len(kb)) + kb
    if isinstance(value, str):
        data = value.encode()
        return head + struct.pack("<BBQ", ord("s"), 0, len(data)) + data
    arr = np.asarray(value)
    if arr.dtype.kind in "iub":
        kind, arr = "i", arr.astype("<i8")
    elif arr.dtype.kind == "f":
        kind, arr = "f", arr.astype("<f8")
    else:
        raise TypeError(f"cannot store {key!r} of dtype {arr.dtype}")
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + struct.pack("<BB", ord(kind), arr.ndim) + dims + arr.tobytes(order="C")


def pack_section(entries: dict) -> bytes:
    body = [struct.pack("<I", len(entries))]
    body += [_pack_entry(k, v) for k, v in entries.items()]
    return b"".join(body)


def unpack_section(name: str, payload: bytes) -> dict:
    view = memoryview(payload)
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(view):
            raise ContainerIntegrityError(f"section {name!r}: malformed payload")
        chunk = view[off:off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", take(2))
        key = bytes(take(klen)).decode()
        kind, ndim = struct.unpack("<BB", take(2))
        kind = chr(kind)
        if kind == "s":
            (n,) = struct.unpack("<Q", take(8))
            out[key] = bytes(take(n)).decode()
            continue
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dtype = {"f": "<f8", "i": "<i8"}.get(kind)
        if dtype is None:
            raise ContainerIntegrityError(f"section {name!r}: unknown entry kind {kind!r}")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(bytes(take(8 * size)), dtype=dtype).reshape(dims)
        out[key] = arr.astype(np.float64 if kind == "f" else np.int64)
    return out


def dumps_container(sections: dict[str, dict]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, entries in sections.items():
        payload = pack_section(entries)
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        parts.append(payload)
    return b"".join(parts)


def loads_container(data: bytes) -> dict[str, dict]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise ContainerIntegrityError("not an HTSV model container")
    version, n_sections = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ContainerIntegrityError(f"unsupported container version {version}")
    off = 12
    sections = {}
    for k in range(n_sections):
        if off + 2 > len(data):
            raise ContainerIntegrityError(f"section #{k}: header truncated")
        (nlen,) = struct.unpack_from("<H", data, off)
        if off + 2 + nlen + 12 > len(data):
            raise ContainerIntegrityError(f"section #{k}: header truncated")
        name = data[off + 2:off + 2 + nlen].decode("utf-8", "replace")
        off += 2 + nlen
        plen, crc = struct.unpack_from("<QI", data, off)
        off += 12
        payload = data[off:off + plen]
        if len(payload) != plen:
            raise ContainerIntegrityError(
                f"section {name!r} truncated ({len(payload)} of {plen} bytes)")
        if zlib.crc32(payload) != crc:
            raise ContainerIntegrityError(f"section {name!r} failed its CRC32 check")
        off += plen
        sections[name] = unpack_section(name, payload)
    if off != len(data):
        raise ContainerIntegrityError(f"{len(data) - off} trailing bytes after last section")
    return sections


def write_container(path, sections: dict[str, dict]) -> None:
    Path(path).write_bytes(dumps_container(sections))


def read_container(path) -> dict[str, dict]:
    return loads_container(Path(path).read_bytes())


# -- estimators <-> sections -------------------------------------------------

def _params_json(est, drop=()) -> str:
    params = {k: v for k, v in est.get_params(deep=False).items() if k not in drop}
    return json.dumps(params, sort_keys=True)


def _classes_json(classes) -> str:
    return json.dumps([str(c) for c in classes])


def cnn_section(model: ShallowCNN) -> dict:
    return {
        "params": _params_json(model),
        "classes": _classes_json(model.classes_),
        "image_shape": np.array(model.image_shape_),
        "kernels": model.kernels_,
        "conv_bias": model.conv_bias_,
        "head_weights": model.head_weights_,
        "head_bias": model.head_bias_,
        "loss_curve": np.array(model.loss_curve_, dtype=np.float64),
    }


def cnn_from_section(s: dict) -> ShallowCNN:
    model = ShallowCNN(**json.loads(s["params"]))
    model.classes_ = np.array(json.loads(s["classes"]), dtype=object)
    model.image_shape_ = tuple(int(v) for v in s["image_shape"])
    model.kernels_ = s["kernels"]
    model.conv_bias_ = s["conv_bias"]
    model.head_weights_ = s["head_weights"]
    model.head_bias_ = s["head_bias"]
    model.feature_dim_ = model.head_weights_.shape[0]
    model.loss_curve_ = list(s["loss_curve"])
    return model


def _node_entries(prefix: str, node: OneVsOneSVC) -> dict:
    out = {f"{prefix}classes": _classes_json(node.classes_),
           f"{prefix}pairs": np.array(node.pairs_, dtype=np.int64).reshape(-1, 2)}
    for k, est in enumerate(node.estimators_):
        m = est.model_
        out[f"{prefix}{k}/kernel"] = np.array([m.kernel.degree, m.kernel.coef0,
                                               m.kernel.scale, m.C], dtype=np.float64)
        out[f"{prefix}{k}/support_vectors"] = m.support_vectors
        out[f"{prefix}{k}/dual_coefs"] = m.dual_coefs
        out[f"{prefix}{k}/bias"] = np.array([m.bias])
        out[f"{prefix}{k}/status"] = np.array([int(m.converged), m.n_iter])
    return out


def _node_from_entries(prefix: str, s: dict, params: dict, n_features: int) -> OneVsOneSVC:
    node = OneVsOneSVC(**params)
    node.classes_ = np.array(json.loads(s[f"{prefix}classes"]), dtype=object)
    node.pairs_ = [tuple(int(v) for v in p) for p in s[f"{prefix}pairs"]]
    node.n_features_in_ = n_features
    ests = []
    for k, (a, b) in enumerate(node.pairs_):
        degree, coef0, scale, C = s[f"{prefix}{k}/kernel"]
        sv = s[f"{prefix}{k}/support_vectors"]
        converged, n_iter = s[f"{prefix}{k}/status"]
        est = BinarySVC(**params)
        est.classes_ = np.array([node.classes_[a], node.classes_[b]], dtype=object)
        est.n_features_in_ = n_features
        est.model_ = BinarySvmModel(
            support_vectors=sv.reshape(-1, n_features),
            dual_coefs=s[f"{prefix}{k}/dual_coefs"],
            bias=float(s[f"{prefix}{k}/bias"][0]),
            kernel=KernelParams(int(degree), float(coef0), float(scale)),
            C=float(C), converged=bool(converged), n_iter=int(n_iter))
        ests.append(est)
    return node.set_estimators(ests)


def htsvm_sections(model: HTSVMClassifier) -> dict[str, dict]:
    sections = {
        "htsvm": {
            "params": _params_json(model, drop=("taxonomy", "n_jobs")),
            "taxonomy": model.taxonomy_.to_text(),
            "n_features": np.array([model.n_features_in_]),
            "node_order": json.dumps(list(model.node_models_)),
        },
    }
    if model.scaler_ is not None:
        sections["standardization"] = {"mean": model.scaler_.mean_,
                                       "scale": model.scaler_.scale_}
    node_params = model.root_members_[0].get_params()
    sections["htsvm/node_params"] = {"params": json.dumps(
        {k: v for k, v in node_params.items() if k != "random_state"}, sort_keys=True)}
    for i, m in enumerate(model.root_members_):
        sections[f"htsvm/root/{i}"] = {"random_state": np.array([m.random_state]),
                                       **_node_entries("", m)}
    for name, m in model.node_models_.items():
        sections[f"htsvm/node/{name}"] = {"random_state": np.array([m.random_state]),
                                          **_node_entries("", m)}
    return sections


def htsvm_from_sections(sections: dict[str, dict]) -> HTSVMClassifier:
    head = sections["htsvm"]
    model = HTSVMClassifier(**json.loads(head["params"]))
    model.taxonomy_ = load_taxonomy(head["taxonomy"])
    model.taxonomy = model.taxonomy_
    n_features = int(head["n_features"][0])
    model.n_features_in_ = n_features
    model.classes_ = np.array(sorted(model.taxonomy_.leaves), dtype=object)
    if "standardization" in sections:
        scaler = StandardScaler()
        scaler.mean_ = sections["standardization"]["mean"]
        scaler.scale_ = sections["standardization"]["scale"]
        scaler.var_ = scaler.scale_ ** 2
        scaler.n_features_in_ = n_features
        scaler.n_samples_seen_ = 0
        model.scaler_ = scaler
    else:
        model.scaler_ = None
    base = json.loads(sections["htsvm/node_params"]["params"])

    def node(sec):
        params = dict(base, random_state=int(sec["random_state"][0]))
        return _node_from_entries("", sec, params, n_features)

    roots = sorted((k for k in sections if k.startswith("htsvm/root/")),
                   key=lambda k: int(k.rsplit("/", 1)[1]))
    model.root_members_ = [node(sections[k]) for k in roots]
    model.node_models_ = {name: node(sections[f"htsvm/node/{name}"])
                          for name in json.loads(head["node_order"])}
    return model


def mlp_section(model: MLPBaseline) -> dict:
    return {
        "params": _params_json(model),
        "classes": _classes_json(model.classes_),
        "hidden_weights": model.hidden_weights_,
        "hidden_bias": model.hidden_bias_,
        "output_weights": model.output_weights_,
        "output_bias": model.output_bias_,
        "mean": model.mean_,
        "scale": model.scale_,
        "loss_curve": np.array(model.loss_curve_, dtype=np.float64),
    }


def mlp_from_section(s: dict) -> MLPBaseline:
    model = MLPBaseline(**json.loads(s["params"]))
    model.classes_ = np.array(json.loads(s["classes"]), dtype=object)
    model.hidden_weights_ = s["hidden_weights"]
    model.hidden_bias_ = s["hidden_bias"]
    model.output_weights_ = s["output_weights"]
    model.output_bias_ = s["output_bias"]
    model.mean_ = s["mean"]
    model.scale_ = s["scale"]
    model.n_features_in_ = model.hidden_weights_.shape[0]
    model.loss_curve_ = list(s["loss_curve"])
    return model


def save_models(path, cnn: ShallowCNN, htsvm: HTSVMClassifier,
                mlp: MLPBaseline | None = None, config: dict | None = None) -> None:
    sections = {"cnn": cnn_section(cnn)}
    sections.update(htsvm_sections(htsvm))
    if mlp is not None:
        sections["mlp"] = mlp_section(mlp)
    if config is not None:
        sections["config"] = {"json": json.dumps(config, sort_keys=True)}
    write_container(path, sections)


def load_models(path) -> dict:
    """Return ``{'cnn', 'htsvm', 'mlp' (or None), 'config' (or None)}``."""
    sections = read_container(path)
    for required in ("cnn", "htsvm"):
        if required not in sections:
            raise ContainerIntegrityError(f"container lacks a {required!r} section")
    return {
        "cnn": cnn_from_section(sections["cnn"]),
        "htsvm": htsvm_from_sections(sections),
        "mlp": mlp_from_section(sections["mlp"]) if "mlp" in sections else None,
        "config": json.loads(sections["config"]["json"]) if "config" in sections else None,
    }
