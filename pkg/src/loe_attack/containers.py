"""Binary containers for weights, aligned matrices and query logs.

Weight container (``.pbwt``), all integers little-endian::

    b"PBWT" | version u16 | layer_count u32 | meta_len u32 | meta (UTF-8 JSON)
    | matrix_count u32 | per matrix: name_len u16, name, rows u32, cols u32,
    rows*cols float64 row-major

Record container (``.pbql``)::

    b"PBQL" | version u16 | record_count u32
    | per record: query_id u32, field_count u16,
      per field: name_len u16, name, rows u32, cols u32, float64 row-major

Vectors are stored as 1 x n matrices and restored as 1-D arrays.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .permutation import Permutation
from .transformer import ActivationTrace, DecoderWeights, Model, ModelConfig

WEIGHT_MAGIC = b"PBWT"
RECORD_MAGIC = b"PBQL"
VERSION = 1


class ContainerError(ValueError):
    pass


def _pack_matrix(name: str, arr) -> bytes:
    a = np.asarray(arr, dtype="<f8")
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ContainerError(f"{name}: only vectors and matrices can be stored")
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw + struct.pack("<II", *a.shape) + a.tobytes(order="C")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError("truncated container")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def matrix(self) -> tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H")
        try:
            name = self.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError("corrupt matrix name") from exc
        rows, cols = self.unpack("<II")
        data = np.frombuffer(self.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
        return name, data


def write_weights(path, matrices: dict[str, np.ndarray], layer_count: int, meta: dict | None = None) -> None:
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [WEIGHT_MAGIC, struct.pack("<HII", VERSION, layer_count, len(meta_raw)), meta_raw,
             struct.pack("<I", len(matrices))]
    parts += [_pack_matrix(name, m) for name, m in matrices.items()]
    Path(path).write_bytes(b"".join(parts))


def read_weights(path) -> tuple[dict[str, np.ndarray], int, dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != WEIGHT_MAGIC:
        raise ContainerError("bad magic, not a weight container")
    version, layer_count, meta_len = r.unpack("<HII")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError("corrupt metadata") from exc
    (count,) = r.unpack("<I")
    mats = dict(r.matrix() for _ in range(count))
    if r.pos != len(r.buf):
        raise ContainerError("trailing bytes after last matrix")
    return mats, layer_count, meta


_LN = ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")


def save_model(path, model: Model) -> None:
    mats = {"token_emb": model.token_emb, "pos_emb": model.pos_emb}
    for l, lw in enumerate(model.layers):
        for kind in ("qkv", "o", "h1", "h2"):
            mats[f"L{l}.w_{kind}"] = lw.linear(kind)
        for name in _LN:
            mats[f"L{l}.{name}"] = getattr(lw, name)
    mats["lnf_gain"], mats["lnf_bias"] = model.lnf_gain, model.lnf_bias
    write_weights(path, mats, model.cfg.num_layers, {"model": model.cfg.__dict__})


def load_model(path) -> Model:
    mats, layer_count, meta = read_weights(path)
    try:
        cfg = ModelConfig(**meta["model"])
        layers = []
        for l in range(layer_count):
            kw = {f"w_{k}": mats[f"L{l}.w_{k}"] for k in ("qkv", "o", "h1", "h2")}
            kw.update({name: mats[f"L{l}.{name}"][0] for name in _LN})
            layers.append(DecoderWeights(**kw))
        model = Model(cfg, mats["token_emb"], mats["pos_emb"], layers, mats["lnf_gain"][0], mats["lnf_bias"][0])
    except (KeyError, TypeError) as exc:
        raise ContainerError(f"weight container is missing model fields: {exc}") from exc
    for l in range(layer_count):
        for kind in ("qkv", "o", "h1", "h2"):
            if model.layers[l].linear(kind).shape != cfg.linear_shape(kind):
                raise ContainerError(f"L{l}.w_{kind} has the wrong shape")
    return model


# ------------------------------------------------------------------ records


def write_records(path, records: list[tuple[int, dict[str, np.ndarray]]]) -> None:
    parts = [RECORD_MAGIC, struct.pack("<HI", VERSION, len(records))]
    for qid, fields in records:
        parts.append(struct.pack("<IH", qid, len(fields)))
        parts += [_pack_matrix(name, arr) for name, arr in fields.items()]
    Path(path).write_bytes(b"".join(parts))


def read_records(path) -> list[tuple[int, dict[str, np.ndarray]]]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != RECORD_MAGIC:
        raise ContainerError("bad magic, not a record container")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    out = []
    for _ in range(count):
        qid, nfields = r.unpack("<IH")
        fields = {}
        for _ in range(nfields):
            name, m = r.matrix()
            fields[name] = m
        out.append((qid, fields))
    if r.pos != len(r.buf):
        raise ContainerError("trailing bytes after last record")
    return out


_VECTOR_FIELDS = ("x", "o")


def record_fields(rec) -> dict[str, np.ndarray]:
    """Flatten a QueryRecord; withheld values are simply absent."""
    f = {}
    for label, v in rec.inputs.items():
        if v is not None:
            f[f"{label}.in"] = v
    for label, v in rec.outputs.items():
        if v is not None:
            f[f"{label}.out"] = v
    for l, a in enumerate(rec.attn):
        for name in ("x", "x_pre", "s", "p", "o"):
            v = getattr(a, name)
            if v is not None:
                f[f"A{l}.{name}"] = v
    f["y"] = rec.y
    return f


def records_from_fields(rows, labels: list[str], num_layers: int):
    from .oracle import AttentionReveal, QueryRecord

    recs = []
    for qid, f in rows:
        def vec(key):
            return f[key][0] if key in f else None

        inputs = {lab: vec(f"{lab}.in") for lab in labels}
        outputs = {lab: vec(f"{lab}.out") for lab in labels}
        attn = []
        for l in range(num_layers):
            get = {n: (vec(f"A{l}.{n}") if n in _VECTOR_FIELDS else f.get(f"A{l}.{n}"))
                   for n in ("x", "x_pre", "s", "p", "o")}
            attn.append(AttentionReveal(**get))
        recs.append(QueryRecord(qid, inputs, outputs, attn, f["y"][0]))
    return recs


def truth_fields(gt) -> dict[str, np.ndarray]:
    f = {}
    for label, p in gt.perm_in.items():
        f[f"{label}.perm_in"] = p.sigma.astype(np.float64)
        f[f"{label}.perm_out"] = gt.perm_out[label].sigma.astype(np.float64)
        f[f"{label}.true_in"] = gt.trace.inputs[label]
        f[f"{label}.true_out"] = gt.trace.outputs[label]
    for l, perms in enumerate(gt.attn_perms):
        for name, p in perms.items():
            f[f"A{l}.perm_{name}"] = p.sigma.astype(np.float64)
    return f


def truths_from_fields(rows, labels: list[str], num_layers: int):
    from .oracle import GroundTruth

    out = []
    for qid, f in rows:
        def perm(key):
            return Permutation(f[key][0].astype(np.int64))

        trace = ActivationTrace(
            inputs={lab: f[f"{lab}.true_in"][0] for lab in labels},
            outputs={lab: f[f"{lab}.true_out"][0] for lab in labels},
        )
        attn = [{n: perm(f"A{l}.perm_{n}") for n in ("x", "x_pre", "pos")} for l in range(num_layers)]
        out.append(GroundTruth(qid, {lab: perm(f"{lab}.perm_in") for lab in labels},
                               {lab: perm(f"{lab}.perm_out") for lab in labels}, attn, trace))
    return out
