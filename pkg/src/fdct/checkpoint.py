"""Single-file training checkpoints.

Layout (little-endian)::

    8s   magic  b"FDCTCKPT"
    u32  format version
    u32  section count
    per section:
        u32  name length, name (UTF-8)
        u64  payload length, payload
    32s  SHA-256 of every preceding byte

The ``meta`` section is canonical JSON (sorted keys).  Every other section
is a tensor: ``u32 ndim``, ``ndim x u64`` dims, then float64 values.
Parameter tensors are named ``param/<name>``; Adam moments ``adam.m/<name>``
and ``adam.v/<name>``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, architecture_dict, init_params
from .nn import AdamState, ParameterStore
from .training import TrainState

MAGIC = b"FDCTCKPT"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(Exception):
    pass


class IntegrityError(CheckpointError):
    """Truncated or corrupted file."""


class VersionError(CheckpointError):
    """Written by an incompatible format version."""


class ArchitectureMismatch(CheckpointError):
    def __init__(self, diffs: list[tuple[str, object, object]]):
        self.diffs = diffs
        lines = [f"  {k}: checkpoint={a!r} config={b!r}" for k, a, b in diffs]
        super().__init__("checkpoint architecture does not match config:\n" + "\n".join(lines))


@dataclass
class Checkpoint:
    config: dict
    architecture: dict
    params: dict[str, np.ndarray]
    iteration: int = 0
    rng_state: dict = field(default_factory=dict)
    adam: dict = field(default_factory=dict)  # lr, beta1, beta2, eps, step
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)


def architecture_of(den_cfg: DenoiserConfig, T: int, kind: str) -> dict:
    """Fields a checkpoint must agree on with the config that loads it."""
    arch = {f"network.{k}": v for k, v in architecture_dict(den_cfg).items()}
    arch["schedule.T"] = T
    arch["schedule.kind"] = kind
    return arch


def check_architecture(ckpt: Checkpoint, expected: dict) -> None:
    keys = sorted(set(ckpt.architecture) | set(expected))
    diffs = [(k, ckpt.architecture.get(k), expected.get(k)) for k in keys
             if _canon(ckpt.architecture.get(k)) != _canon(expected.get(k))]
    if diffs:
        raise ArchitectureMismatch(diffs)


def _canon(v):
    return json.dumps(v, sort_keys=True)


# -- conversion to and from a live training state -----------------------------------

def from_state(state: TrainState, config: dict, architecture: dict) -> Checkpoint:
    names = state.params.names()
    opt = state.opt
    return Checkpoint(
        config=config, architecture=architecture,
        params={k: state.params[k].data.copy() for k in names},
        iteration=state.iteration, rng_state=state.rng_state(),
        adam={"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
              "step": opt.step},
        adam_m={k: m.copy() for k, m in zip(names, opt.m)},
        adam_v={k: v.copy() for k, v in zip(names, opt.v)})


def load_params(ckpt: Checkpoint, den_cfg: DenoiserConfig) -> ParameterStore:
    """A parameter store shaped by ``den_cfg`` and filled from ``ckpt``."""
    store = init_params(den_cfg, 0)
    missing = set(store.names()) ^ set(ckpt.params)
    if missing:
        raise ArchitectureMismatch([(f"param/{k}", k in ckpt.params, k in store)
                                    for k in sorted(missing)])
    store.set_arrays(ckpt.params)
    return store


def to_state(ckpt: Checkpoint, den_cfg: DenoiserConfig) -> TrainState:
    params = load_params(ckpt, den_cfg)
    names = params.names()
    a = ckpt.adam
    opt = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                    step=int(a["step"]))
    if ckpt.adam_m:
        opt.m = [ckpt.adam_m[k].copy() for k in names]
        opt.v = [ckpt.adam_v[k].copy() for k in names]
    state = TrainState(params=params, opt=opt, iteration=ckpt.iteration)
    state.set_rng_state(ckpt.rng_state)
    return state


# -- encoding ------------------------------------------------------------------------

def _tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _tensor_from(buf: bytes, name: str) -> np.ndarray:
    if len(buf) < 4:
        raise IntegrityError(f"section {name!r}: truncated tensor header")
    (ndim,) = struct.unpack_from("<I", buf, 0)
    if len(buf) < 4 + 8 * ndim:
        raise IntegrityError(f"section {name!r}: truncated tensor header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 4)
    off = 4 + 8 * ndim
    if len(buf) - off != 8 * int(np.prod(shape, dtype=np.int64)):
        raise IntegrityError(f"section {name!r}: payload does not match shape {shape}")
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


def encode(ckpt: Checkpoint) -> bytes:
    meta = {"format_version": FORMAT_VERSION, "config": ckpt.config,
            "architecture": ckpt.architecture, "iteration": ckpt.iteration,
            "rng_state": ckpt.rng_state, "adam": ckpt.adam,
            "param_names": list(ckpt.params)}
    sections = [("meta", json.dumps(meta, sort_keys=True, separators=(",", ":")).encode())]
    sections += [(f"param/{k}", _tensor_bytes(v)) for k, v in ckpt.params.items()]
    sections += [(f"adam.m/{k}", _tensor_bytes(v)) for k, v in ckpt.adam_m.items()]
    sections += [(f"adam.v/{k}", _tensor_bytes(v)) for k, v in ckpt.adam_v.items()]
    out = bytearray(MAGIC + struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, payload in sections:
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload
    out += hashlib.sha256(out).digest()
    return bytes(out)


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 8 + _DIGEST:
        raise IntegrityError("file too short to be a checkpoint")
    if buf[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version} is not supported "
                           f"(expected {FORMAT_VERSION})")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    pos = len(MAGIC) + 8
    sections: dict[str, bytes] = {}
    for _ in range(count):
        if pos + 4 > len(body):
            raise IntegrityError("truncated section header")
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if pos + n + 8 > len(body):
            raise IntegrityError("truncated section name")
        name = body[pos:pos + n].decode("utf-8", errors="replace")
        pos += n
        (size,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + size > len(body):
            raise IntegrityError(f"section {name!r} runs past the end of the file")
        sections[name] = body[pos:pos + size]
        pos += size
    if pos != len(body):
        raise IntegrityError("trailing bytes after the last section")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checksum mismatch")
    if "meta" not in sections:
        raise IntegrityError("missing meta section")
    meta = json.loads(sections["meta"])

    def group(prefix):
        return {k[len(prefix):]: _tensor_from(v, k) for k, v in sections.items()
                if k.startswith(prefix)}

    params = group("param/")
    order = meta.get("param_names", list(params))
    if set(order) != set(params):
        raise IntegrityError("parameter sections do not match the meta listing")
    m, v = group("adam.m/"), group("adam.v/")
    return Checkpoint(config=meta["config"], architecture=meta["architecture"],
                      params={k: params[k] for k in order},
                      iteration=int(meta["iteration"]), rng_state=meta["rng_state"],
                      adam=meta["adam"],
                      adam_m={k: m[k] for k in order if k in m},
                      adam_v={k: v[k] for k in order if k in v})


def save(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(buf)
