"""Optimizer-agnostic plumbing: parameter registry, slot state, checkpoints.

Slot variables are held as ``{param_name: {slot_name: array}}`` so the
checkpoint writer never needs to know which optimizer produced them. Each
hyper-parameter object knows how to allocate its own slots for a given
:class:`ParamSpec` (see ``init_slots`` on the optimizer modules).
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import AxisMask, ensure_finite

__all__ = [
    "ParamSpec",
    "OptimizerState",
    "init_state",
    "apply_update",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_metadata",
]

CHECKPOINT_MAGIC = b"AMOSCKPT"
CHECKPOINT_VERSION = 1
ENDIAN_MARK = 0x01020304  # stored little-endian; read back as anything else -> reject


@dataclass(frozen=True)
class ParamSpec:
    """Per-variable metadata: shape, target scale eta, slot reduction, clipping."""

    name: str
    shape: tuple[int, ...]
    eta: float
    reduction: AxisMask
    clip_threshold: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ConfigError("parameter name must be non-empty")
        if any(n <= 0 for n in self.shape):
            raise ConfigError(f"{self.name}: dimensions must be positive, got {self.shape}")
        if not self.eta > 0:
            raise ConfigError(f"{self.name}: eta must be positive, got {self.eta}")
        self.reduction.check_rank(self.shape)
        if self.clip_threshold is not None and not self.clip_threshold > 0:
            raise ConfigError(f"{self.name}: clip threshold must be positive")

    @property
    def reduced_shape(self) -> tuple[int, ...]:
        return self.reduction.reduced_shape(self.shape)


@dataclass
class OptimizerState:
    """Step counter plus named slot tensors per parameter; checkpointable."""

    step: int
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def init_state(specs: list[ParamSpec], hyper) -> OptimizerState:
    """Zero-filled slots for every spec; ``hyper`` decides the slot layout."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate parameter names: {dupes}")
    return OptimizerState(step=0, slots={s.name: hyper.init_slots(s) for s in specs})


def apply_update(theta: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """theta minus delta, shapes strictly equal."""
    if theta.shape != delta.shape:
        raise ShapeError(f"update shape {delta.shape} does not match parameter {theta.shape}")
    return ensure_finite(theta - delta, "apply_update")


# -- checkpoint container -----------------------------------------------------
#
# magic (8 bytes) | version u32 | endian-mark u32 | manifest length u64 |
# manifest (json) | raw little-endian float64 payloads in manifest order


def _tensor_entries(params: dict[str, np.ndarray], state: OptimizerState):
    for name in sorted(params):
        yield {"group": "param", "param": name, "slot": None}, params[name]
    for name in sorted(state.slots):
        for slot in sorted(state.slots[name]):
            yield {"group": "slot", "param": name, "slot": slot}, state.slots[name][slot]


def save_checkpoint(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    path: str | Path,
    hyper_snapshot: dict | None = None,
) -> None:
    entries = []
    payloads = []
    for meta, arr in _tensor_entries(params, state):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({**meta, "shape": list(arr.shape)})
        payloads.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    manifest = json.dumps(
        {"step": state.step, "hyper": hyper_snapshot or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")

    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", ENDIAN_MARK))
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for blob in payloads:
            f.write(blob)


def _read_exact(f, n: int, what: str) -> bytes:
    blob = f.read(n)
    if len(blob) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob


def _read_manifest(f) -> dict:
    if _read_exact(f, 8, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mark,) = struct.unpack("<I", _read_exact(f, 4, "endian mark"))
    if mark != ENDIAN_MARK:
        raise CheckpointError("endianness mark mismatch")
    (mlen,) = struct.unpack("<Q", _read_exact(f, 8, "manifest length"))
    try:
        return json.loads(_read_exact(f, mlen, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError("corrupt checkpoint manifest") from e


def load_checkpoint(path: str | Path) -> tuple[OptimizerState, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`; bit-exact round trip."""
    with open(path, "rb") as f:
        manifest = _read_manifest(f)
        params: dict[str, np.ndarray] = {}
        slots: dict[str, dict[str, np.ndarray]] = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = _read_exact(f, count * 8, f"tensor {entry['param']}")
            arr = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
            if entry["group"] == "param":
                params[entry["param"]] = arr
            else:
                slots.setdefault(entry["param"], {})[entry["slot"]] = arr
    state = OptimizerState(step=int(manifest["step"]), slots=slots)
    return state, params


def checkpoint_metadata(path: str | Path) -> dict:
    """Step, version, and hyper-parameter snapshot without loading payloads."""
    with open(path, "rb") as f:
        manifest = _read_manifest(f)
    return {
        "version": CHECKPOINT_VERSION,
        "step": int(manifest["step"]),
        "hyper": manifest.get("hyper", {}),
        "tensors": len(manifest["tensors"]),
    }
