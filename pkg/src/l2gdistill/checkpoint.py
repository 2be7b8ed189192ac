"""Versioned binary checkpoints of a full training state.

Layout::

    8 bytes   magic  b"L2GDCKPT"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length, uint64 little-endian
    header    UTF-8 JSON (sorted keys): dims, rng algorithm and state, seed,
              epoch, partial flag, optimizer scalars, resolved config and
              the array manifest
    arrays    raw little-endian blobs in manifest order

Floats are stored as ``<f8`` so a write/read round trip is bit-exact.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .clustering import PseudoLabeling
from .errors import CheckpointError
from .memory import MemoryBank
from .numerics import RNG_ALGORITHM
from .trainer import TrainState

MAGIC = b"L2GDCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    state: TrainState
    config: dict
    seed: int
    partial: bool
    header: dict


def _encoder_arrays(prefix, state):
    out = [(f"{prefix}.{n}", state.params[n]) for n in enc.PARAM_NAMES]
    out += [(f"{prefix}.running_mean", state.running_mean), (f"{prefix}.running_var", state.running_var)]
    return out


def _collect(state):
    arrays = _encoder_arrays("student", state.student) + _encoder_arrays("teacher", state.teacher)
    opt = state.optimizer
    for n in enc.PARAM_NAMES:
        if n in opt.m:
            arrays += [(f"adam_m.{n}", opt.m[n]), (f"adam_v.{n}", opt.v[n])]
    arrays.append(("bank.features", state.bank.features))
    lab = state.bank.labeling
    if lab is not None:
        arrays.append(("bank.labels", np.asarray(lab.labels, dtype=np.int64)))
        if lab.core is not None:
            arrays.append(("bank.core", np.asarray(lab.core, dtype=np.int64)))
    return arrays


def save_checkpoint(path, state, config=None, seed=0, partial=False):
    """Write ``state`` to ``path``; ``config`` is echoed verbatim into the header."""
    arrays = _collect(state)
    manifest = []
    blobs = []
    for name, arr in arrays:
        arr = np.asarray(arr)
        dtype = "<i8" if arr.dtype.kind in "iub" else "<f8"
        data = np.ascontiguousarray(arr, dtype=dtype)
        manifest.append({"name": name, "dtype": dtype, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    opt = state.optimizer
    lab = state.bank.labeling
    d_raw, hidden, d_emb = state.student.dims
    header = {
        "format_version": FORMAT_VERSION,
        "dims": {"d_raw": d_raw, "hidden": hidden, "d_emb": d_emb},
        "rng_algorithm": RNG_ALGORITHM,
        "rng_state": state.rng.bit_generator.state,
        "seed": int(seed),
        "epoch": int(state.epoch),
        "partial": bool(partial),
        "num_clusters": None if lab is None else int(lab.num_clusters),
        "optimizer": {
            "base_lr": opt.base_lr, "weight_decay": opt.weight_decay,
            "step_size": opt.step_size, "decay": opt.decay,
            "betas": list(opt.betas), "eps": opt.eps, "step": opt.step,
        },
        "config": config or {},
        "arrays": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def read_header(path):
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    prefix = fh.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise CheckpointError("truncated checkpoint prefix")
    magic, version, n = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(fh.read(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    return header, _PREFIX.size + n


def load_checkpoint(path):
    """Read a checkpoint back into a :class:`Checkpoint`."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        header, _ = _read_header(fh)
        if header.get("rng_algorithm") != RNG_ALGORITHM:
            raise CheckpointError(f"unknown rng algorithm {header.get('rng_algorithm')!r}")
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise CheckpointError(f"truncated array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"]).astype(
                np.int64 if dtype.kind == "i" else np.float64)
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last array")
    return Checkpoint(_rebuild(header, arrays), header["config"], header["seed"], header["partial"], header)


def _encoder(prefix, arrays):
    params = {n: arrays[f"{prefix}.{n}"] for n in enc.PARAM_NAMES}
    return enc.EncoderState(params, arrays[f"{prefix}.running_mean"], arrays[f"{prefix}.running_var"])


def _rebuild(header, arrays):
    try:
        student = _encoder("student", arrays)
        teacher = _encoder("teacher", arrays)
    except KeyError as exc:
        raise CheckpointError(f"missing array {exc}") from exc
    o = header["optimizer"]
    opt = enc.OptimizerState(base_lr=o["base_lr"], weight_decay=o["weight_decay"],
                             step_size=o["step_size"], decay=o["decay"],
                             betas=tuple(o["betas"]), eps=o["eps"], step=o["step"])
    for n in enc.PARAM_NAMES:
        if f"adam_m.{n}" in arrays:
            opt.m[n] = arrays[f"adam_m.{n}"]
            opt.v[n] = arrays[f"adam_v.{n}"]
    bank = MemoryBank.__new__(MemoryBank)
    bank.features = arrays["bank.features"]
    bank.labeling = None
    if "bank.labels" in arrays:
        core = arrays.get("bank.core")
        bank.set_labeling(PseudoLabeling(arrays["bank.labels"], header["num_clusters"],
                                         None if core is None else core.astype(bool)))
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = header["rng_state"]
    return TrainState(student, teacher, opt, bank, rng, header["epoch"])
