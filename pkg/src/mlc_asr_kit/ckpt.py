"""Tensor container I/O, equal-weight checkpoint averaging and early stopping.

The container layout is the single-file format used across the model
ecosystem: an 8-byte little-endian header length ``N``, ``N`` bytes of JSON
mapping tensor names to ``{"dtype", "shape", "data_offsets"}``, then the raw
little-endian payloads. Offsets are relative to the end of the header.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from contextlib import ExitStack
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from mlc_asr_kit.errors import FormatError, InputError

logger = logging.getLogger(__name__)

DTYPES = {"F32": np.dtype("<f4"), "F16": np.dtype("<f2")}
_DTYPE_NAMES = {v: k for k, v in DTYPES.items()}
METADATA_KEY = "__metadata__"


@dataclass(frozen=True)
class TensorSpec:
    dtype: str
    shape: tuple[int, ...]
    begin: int
    end: int

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


@dataclass
class TensorStore:
    """Named float tensors. Arrays are kept little-endian ``float32``/``float16``."""

    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] | None = None

    def __post_init__(self):
        for name, arr in self.tensors.items():
            if name == METADATA_KEY:
                raise InputError(f"{METADATA_KEY!r} is reserved and cannot name a tensor")
            if arr.dtype.newbyteorder("<") not in _DTYPE_NAMES:
                raise InputError(f"tensor {name!r} has unsupported dtype {arr.dtype}")

    def schema(self) -> dict[str, tuple[str, tuple[int, ...]]]:
        return {name: (dtype_name(arr), tuple(arr.shape)) for name, arr in self.tensors.items()}

    def __eq__(self, other: object) -> bool:
        """Bit-level equality of names, dtypes, shapes, payloads and metadata."""
        if not isinstance(other, TensorStore):
            return NotImplemented
        return (
            self.schema() == other.schema()
            and (self.metadata or None) == (other.metadata or None)
            and all(_payload(a) == _payload(other.tensors[n]) for n, a in self.tensors.items())
        )


def dtype_name(arr: np.ndarray) -> str:
    return _DTYPE_NAMES[arr.dtype.newbyteorder("<")]


def _payload(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def encode_store(store: TensorStore) -> bytes:
    """Serialize ``store``. Tensors are laid out in name order."""
    header: dict = {}
    if store.metadata is not None:
        header[METADATA_KEY] = dict(store.metadata)
    chunks = []
    offset = 0
    for name in sorted(store.tensors):
        arr = store.tensors[name]
        data = _payload(arr)
        header[name] = {"dtype": dtype_name(arr), "shape": list(arr.shape), "data_offsets": [offset, offset + len(data)]}
        chunks.append(data)
        offset += len(data)
    blob = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    blob += b" " * (-len(blob) % 8)
    return struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def write_store(store: TensorStore, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_store(store))


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise FormatError(f"duplicate tensor name {key!r} in header", 8)
        seen[key] = value
    return seen


def parse_header(head: bytes, file_size: int) -> tuple[dict[str, TensorSpec], dict[str, str] | None, int]:
    """Validate a header and return ``(specs, metadata, data_start)``.

    ``head`` must hold at least the length prefix plus the header bytes.
    """
    if file_size < 8 or len(head) < 8:
        raise FormatError("file shorter than the 8-byte header length", 0)
    (n,) = struct.unpack("<Q", head[:8])
    if 8 + n > file_size:
        raise FormatError(f"header length {n} runs past end of file ({file_size} bytes)", 0)
    try:
        doc = json.loads(head[8 : 8 + n].decode("utf-8"), object_pairs_hook=_reject_duplicates)
    except UnicodeDecodeError as exc:
        raise FormatError(f"header is not UTF-8: {exc.reason}", 8 + exc.start) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc.msg}", 8 + exc.pos) from None
    if not isinstance(doc, dict):
        raise FormatError("header is not a JSON object", 8)
    data_start = 8 + n
    data_len = file_size - data_start
    metadata = doc.pop(METADATA_KEY, None)
    if metadata is not None and not (
        isinstance(metadata, dict) and all(isinstance(k, str) and isinstance(v, str) for k, v in metadata.items())
    ):
        raise FormatError("__metadata__ must map strings to strings", 8)
    specs: dict[str, TensorSpec] = {}
    for name, entry in doc.items():
        if not isinstance(entry, dict) or set(entry) != {"dtype", "shape", "data_offsets"}:
            raise FormatError(f"tensor {name!r}: entry must have exactly dtype, shape, data_offsets", 8)
        dtype = entry["dtype"]
        if dtype not in DTYPES:
            raise FormatError(f"tensor {name!r}: unknown dtype {dtype!r}", 8)
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(type(d) is int and d >= 0 for d in shape):
            raise FormatError(f"tensor {name!r}: shape must be a list of non-negative ints", 8)
        offs = entry["data_offsets"]
        if not (isinstance(offs, list) and len(offs) == 2 and all(type(o) is int and o >= 0 for o in offs)):
            raise FormatError(f"tensor {name!r}: data_offsets must be two non-negative ints", 8)
        begin, end = offs
        if end > data_len:
            raise FormatError(f"tensor {name!r}: data end {end} beyond data region of {data_len} bytes", data_start + end)
        expected = math.prod(shape) * DTYPES[dtype].itemsize
        if end - begin != expected:
            raise FormatError(
                f"tensor {name!r}: {end - begin} payload bytes, shape {shape} needs {expected}", data_start + begin
            )
        specs[name] = TensorSpec(dtype, tuple(shape), begin, end)
    cursor = 0
    for name, spec in sorted(specs.items(), key=lambda kv: (kv[1].begin, kv[1].end)):
        if spec.begin != cursor:
            kind = "overlaps previous tensor" if spec.begin < cursor else "leaves a gap"
            raise FormatError(f"tensor {name!r}: data {kind}", data_start + spec.begin)
        cursor = spec.end
    if cursor != data_len:
        raise FormatError(f"data region has {data_len - cursor} trailing bytes not owned by any tensor", data_start + cursor)
    return specs, metadata, data_start


class StoreReader:
    """Lazy reader that loads one tensor at a time from an open file."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._fh: BinaryIO = open(self.path, "rb")
        try:
            size = os.fstat(self._fh.fileno()).st_size
            prefix = self._fh.read(8)
            n = struct.unpack("<Q", prefix)[0] if len(prefix) == 8 else 0
            head = prefix + self._fh.read(min(n, max(size - 8, 0)))
            self.specs, self.metadata, self._data_start = parse_header(head, size)
        except BaseException:
            self._fh.close()
            raise

    def schema(self) -> dict[str, tuple[str, tuple[int, ...]]]:
        return {name: (s.dtype, s.shape) for name, s in self.specs.items()}

    def read(self, name: str) -> np.ndarray:
        spec = self.specs[name]
        self._fh.seek(self._data_start + spec.begin)
        data = self._fh.read(spec.end - spec.begin)
        if len(data) != spec.end - spec.begin:
            raise FormatError(f"tensor {name!r}: truncated payload", self._data_start + spec.begin + len(data))
        return np.frombuffer(data, dtype=DTYPES[spec.dtype]).reshape(spec.shape).copy()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "StoreReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def decode_store(blob: bytes) -> TensorStore:
    specs, metadata, start = parse_header(blob, len(blob))
    tensors = {
        name: np.frombuffer(blob, dtype=DTYPES[s.dtype], count=s.numel, offset=start + s.begin).reshape(s.shape).copy()
        for name, s in specs.items()
    }
    return TensorStore(tensors, metadata)


def read_store(path: str | os.PathLike) -> TensorStore:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}") from None
    return decode_store(blob)


def mean_tensor(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean, accumulated in float64 and rounded once.

    Values are sorted per element before summation, so the result does not
    depend on the order of ``arrays``.
    """
    out_dtype = arrays[0].dtype
    stacked = np.stack([np.asarray(a, dtype=np.float64) for a in arrays])
    stacked.sort(axis=0)
    # Seeding with the first row keeps -0.0 when every input is -0.0.
    total = stacked[0].copy()
    for row in stacked[1:]:
        total += row
    return (total / len(arrays)).astype(out_dtype)


def _check_schema(reference: Mapping, other: Mapping, label: str) -> None:
    for name in sorted(set(reference) | set(other)):
        if name not in other:
            raise InputError(f"{label}: tensor {name!r} is missing")
        if name not in reference:
            raise InputError(f"{label}: unexpected tensor {name!r}")
        if reference[name] != other[name]:
            raise InputError(f"{label}: tensor {name!r} is {other[name]}, expected {reference[name]}")


def average(stores: Sequence[TensorStore]) -> TensorStore:
    """Equal-weight average of stores that share one schema.

    Raises:
        InputError: for an empty list or a schema mismatch, naming the first
            offending tensor.
    """
    if not stores:
        raise InputError("cannot average an empty list of checkpoints")
    schema = stores[0].schema()
    for k, store in enumerate(stores[1:], start=1):
        _check_schema(schema, store.schema(), f"checkpoint #{k}")
    tensors = {name: mean_tensor([s.tensors[name] for s in stores]) for name in sorted(schema)}
    return TensorStore(tensors, stores[0].metadata)


def average_files(paths: Sequence[str | os.PathLike], out: str | os.PathLike) -> TensorStore:
    """Average checkpoint files, holding only one tensor per input in memory.

    Returns the averaged store (also written to ``out``).
    """
    if not paths:
        raise InputError("cannot average an empty list of checkpoints")
    with ExitStack() as stack:
        readers = [stack.enter_context(StoreReader(p)) for p in paths]
        schema = readers[0].schema()
        for reader in readers[1:]:
            _check_schema(schema, reader.schema(), str(reader.path))
        tensors = {name: mean_tensor([r.read(name) for r in readers]) for name in sorted(schema)}
        result = TensorStore(tensors, readers[0].metadata)
    write_store(result, out)
    return result


@dataclass(frozen=True)
class CheckpointMeta:
    step: int
    val_acc: float
    path: str


def load_run_log(path: str | os.PathLike) -> list[CheckpointMeta]:
    """Parse ``step<TAB>val_acc<TAB>path`` lines; steps must strictly increase.

    Relative checkpoint paths are resolved against the log's directory.
    """
    base = Path(path).parent
    metas: list[CheckpointMeta] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise InputError(f"run log not found: {path}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected step<TAB>val_acc<TAB>path")
        try:
            step, acc = int(parts[0]), float(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: step must be an int and val_acc a number") from None
        if step < 0 or not 0.0 <= acc <= 1.0:
            raise InputError(f"{path}:{lineno}: need step >= 0 and 0 <= val_acc <= 1")
        if metas and step <= metas[-1].step:
            raise InputError(f"{path}:{lineno}: step {step} does not increase (previous {metas[-1].step})")
        ckpt = Path(parts[2])
        metas.append(CheckpointMeta(step, acc, str(ckpt if ckpt.is_absolute() else base / ckpt)))
    return metas


class Selection(NamedTuple):
    checkpoints: list[CheckpointMeta]
    underfull: bool


def select_last_k(metas: Sequence[CheckpointMeta], k: int = 15) -> Selection:
    """The ``k`` latest checkpoints in ascending step order.

    ``underfull`` is set (and a warning logged) when fewer than ``k`` exist.
    """
    if not metas:
        raise InputError("run log is empty")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    chosen = sorted(metas, key=lambda m: m.step)[-k:]
    underfull = len(chosen) < k
    if underfull:
        logger.warning("only %d checkpoints available, %d requested", len(chosen), k)
    return Selection(chosen, underfull)


@dataclass(frozen=True)
class EarlyStopState:
    tolerance: int = 2000
    best_step: int | None = None
    best_acc: float = -math.inf
    last_step: int | None = None
    strict: bool = True

    def __post_init__(self):
        if self.tolerance <= 0:
            raise InputError(f"tolerance must be > 0, got {self.tolerance}")


def early_stop_update(state: EarlyStopState, step: int, val_acc: float) -> tuple[EarlyStopState, bool]:
    """Record one validation result; return the new state and the stop flag.

    With ``strict`` an equal accuracy does not count as an improvement.
    The stop test ``step - best_step >= tolerance`` runs after the update.
    """
    if state.last_step is not None and step <= state.last_step:
        raise InputError(f"step {step} does not increase (previous {state.last_step})")
    improved = val_acc > state.best_acc if state.strict else val_acc >= state.best_acc
    if improved:
        state = replace(state, best_step=step, best_acc=val_acc, last_step=step)
    else:
        state = replace(state, last_step=step)
    return state, step - state.best_step >= state.tolerance


class EarlyStopResult(NamedTuple):
    stop_step: int | None
    best: CheckpointMeta


def replay_early_stop(metas: Iterable[CheckpointMeta], tolerance: int = 2000, strict: bool = True) -> EarlyStopResult:
    """Feed a run log through the early-stop rule.

    ``stop_step`` is the first step at which training would have stopped,
    or ``None`` if the log never triggers it.
    """
    state = EarlyStopState(tolerance=tolerance, strict=strict)
    best = None
    for meta in metas:
        state, stop = early_stop_update(state, meta.step, meta.val_acc)
        if state.best_step == meta.step:
            best = meta
        if stop:
            return EarlyStopResult(meta.step, best)
    if best is None:
        raise InputError("run log is empty")
    return EarlyStopResult(None, best)
