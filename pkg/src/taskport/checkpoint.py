"""Checkpoint containers, task vectors, and permutation-assignment files.

A checkpoint is a directory holding ``manifest.json`` and ``tensors.bin``:

* ``manifest.json`` - UTF-8 JSON with ``format_version``, ``kind``
  (``weight_set`` / ``task_vector`` / ``eval_batch``), the architecture
  fields, and an ordered list of ``{name, shape, offset, length}`` records.
  ``offset`` and ``length`` are in bytes into ``tensors.bin``.
* ``tensors.bin`` - concatenated raw little-endian float32 values at the
  declared offsets.

Values are stored as float32 on disk and promoted to float64 in memory, so
``write -> read -> write`` is byte stable.  A permutation assignment is a
UTF-8 text file with one ``<variable_id> : i0,i1,...`` record per variable;
attention variables may be stored either flat over the full width or as a
``*.inter`` record plus one ``*.intra.<h>`` record per head.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArchMismatchError,
    AssignmentFormatError,
    MalformedManifestError,
    MissingTensorError,
    NonFiniteTensorError,
    ShapeMismatchError,
)
from .perms import BlockPermutation, PermutationAssignment, check_permutation

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
TENSORS_NAME = "tensors.bin"

KIND_WEIGHT_SET = "weight_set"
KIND_TASK_VECTOR = "task_vector"
KIND_EVAL_BATCH = "eval_batch"

_ARCH_FIELDS = (
    "n_blocks",
    "n_heads",
    "embed_dim",
    "mlp_hidden",
    "input_dim",
    "output_dim",
    "has_layernorm",
)


@dataclass(frozen=True)
class ArchSpec:
    """Static description of the toy transformer family handled here."""

    n_blocks: int
    n_heads: int
    embed_dim: int
    mlp_hidden: int
    input_dim: int
    output_dim: int
    has_layernorm: bool = False

    def __post_init__(self):
        for name in ("n_blocks", "n_heads", "embed_dim", "mlp_hidden", "input_dim", "output_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Canonical tensor names and shapes, in manifest order."""
        d_m, d_h = self.embed_dim, self.mlp_hidden
        shapes: dict[str, tuple[int, ...]] = {"embed.weight": (d_m, self.input_dim)}
        for i in range(self.n_blocks):
            b = f"block.{i}"
            for proj in ("q", "k", "v", "out"):
                shapes[f"{b}.attn.{proj}.weight"] = (d_m, d_m)
                shapes[f"{b}.attn.{proj}.bias"] = (d_m,)
            if self.has_layernorm:
                shapes[f"{b}.ln1.gain"] = (d_m,)
                shapes[f"{b}.ln1.bias"] = (d_m,)
            shapes[f"{b}.mlp.fc1.weight"] = (d_h, d_m)
            shapes[f"{b}.mlp.fc1.bias"] = (d_h,)
            shapes[f"{b}.mlp.fc2.weight"] = (d_m, d_h)
            shapes[f"{b}.mlp.fc2.bias"] = (d_m,)
            if self.has_layernorm:
                shapes[f"{b}.ln2.gain"] = (d_m,)
                shapes[f"{b}.ln2.bias"] = (d_m,)
        shapes["head.weight"] = (self.output_dim, d_m)
        return shapes

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in _ARCH_FIELDS}

    @staticmethod
    def from_json_dict(d: dict) -> "ArchSpec":
        try:
            kwargs = {name: d[name] for name in _ARCH_FIELDS}
        except KeyError as e:
            raise MalformedManifestError(f"manifest arch is missing field {e.args[0]!r}") from e
        if not isinstance(kwargs["has_layernorm"], bool):
            raise MalformedManifestError("arch field 'has_layernorm' must be a boolean")
        try:
            return ArchSpec(**kwargs)
        except (TypeError, ValueError) as e:
            raise MalformedManifestError(f"invalid arch in manifest: {e}") from e


def _validate_tensors(arch: ArchSpec, tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    expected = arch.tensor_shapes()
    out: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise MissingTensorError(name)
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeMismatchError(name, f"got {arr.shape}, arch implies {shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteTensorError(name)
        out[name] = arr
    extra = set(tensors) - set(expected)
    if extra:
        raise ShapeMismatchError(sorted(extra)[0], "tensor not implied by arch")
    return out


@dataclass
class WeightSet:
    """All parameters of one model, keyed by canonical tensor name."""

    arch: ArchSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.tensors = _validate_tensors(self.arch, self.tensors)

    def copy(self) -> "WeightSet":
        return WeightSet(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass
class TaskVector:
    """Per-tensor additive delta sharing a WeightSet's key space."""

    arch: ArchSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.tensors = _validate_tensors(self.arch, self.tensors)

    def copy(self) -> "TaskVector":
        return TaskVector(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_container(path: str, arch: ArchSpec, kind: str, tensors: dict[str, np.ndarray]) -> None:
    """Low-level container writer; tensor order follows the dict order."""
    os.makedirs(path, exist_ok=True)
    records = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        records.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "length": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arch": arch.to_json_dict(),
        "tensors": records,
    }
    _atomic_write_bytes(os.path.join(path, TENSORS_NAME), b"".join(blobs))
    _atomic_write_bytes(
        os.path.join(path, MANIFEST_NAME),
        json.dumps(manifest, indent=1).encode("utf-8"),
    )


def read_container(path: str, expect_kind: str | None = None) -> tuple[ArchSpec, str, dict[str, np.ndarray]]:
    """Low-level container reader.  Promotes to float64; never coerces shapes."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, "rb") as f:
            manifest = json.loads(f.read().decode("utf-8"))
    except OSError as e:
        raise MalformedManifestError(f"cannot read {manifest_path}: {e}") from e
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedManifestError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise MalformedManifestError("unknown or missing format_version")
    kind = manifest.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise MalformedManifestError(f"expected kind {expect_kind!r}, found {kind!r}")
    arch = ArchSpec.from_json_dict(manifest.get("arch", {}))
    records = manifest.get("tensors")
    if not isinstance(records, list):
        raise MalformedManifestError("manifest has no tensor list")

    try:
        with open(os.path.join(path, TENSORS_NAME), "rb") as f:
            raw = f.read()
    except OSError as e:
        raise MalformedManifestError(f"cannot read tensor data: {e}") from e

    tensors: dict[str, np.ndarray] = {}
    for rec in records:
        try:
            name = rec["name"]
            shape = tuple(int(s) for s in rec["shape"])
            offset = int(rec["offset"])
            length = int(rec["length"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedManifestError(f"bad tensor record {rec!r}") from e
        count = int(np.prod(shape)) if shape else 1
        if length != 4 * count:
            raise ShapeMismatchError(name, f"manifest shape {shape} needs {4 * count} bytes, record declares {length}")
        if offset < 0 or offset + length > len(raw):
            raise ShapeMismatchError(name, f"record [{offset}, {offset + length}) exceeds blob of {len(raw)} bytes")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = arr.astype(np.float64)
    return arch, kind, tensors


def write_checkpoint(ws: WeightSet, path: str) -> None:
    tensors = _validate_tensors(ws.arch, ws.tensors)
    write_container(path, ws.arch, KIND_WEIGHT_SET, tensors)


def read_checkpoint(path: str) -> WeightSet:
    arch, _, tensors = read_container(path, expect_kind=KIND_WEIGHT_SET)
    return WeightSet(arch, tensors)


def write_task_vector(tv: TaskVector, path: str) -> None:
    tensors = _validate_tensors(tv.arch, tv.tensors)
    write_container(path, tv.arch, KIND_TASK_VECTOR, tensors)


def read_task_vector(path: str) -> TaskVector:
    arch, _, tensors = read_container(path, expect_kind=KIND_TASK_VECTOR)
    return TaskVector(arch, tensors)


def require_same_arch(a: ArchSpec, b: ArchSpec, what: str = "inputs") -> None:
    if a != b:
        raise ArchMismatchError(f"{what} disagree on architecture: {a} vs {b}")


# --------------------------------------------------------------------------
# permutation-assignment files


def _format_record(var_id: str, vec) -> str:
    return f"{var_id} : " + ",".join(str(int(x)) for x in vec)


def write_permutation_assignment(assignment: PermutationAssignment, path: str) -> None:
    """One text record per variable; attention variables with structured
    detail are stored as their inter record plus one intra record per head."""
    lines = []
    for var_id in sorted(assignment.perms):
        bp = assignment.blocks.get(var_id)
        if bp is not None:
            lines.append(_format_record(f"{var_id}.inter", bp.inter))
            for h, intra in enumerate(bp.intras):
                lines.append(_format_record(f"{var_id}.intra.{h}", intra))
        else:
            lines.append(_format_record(var_id, assignment.perms[var_id]))
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_index_vector(text: str, where: str) -> np.ndarray:
    try:
        values = [int(tok) for tok in text.split(",")]
    except ValueError as e:
        raise AssignmentFormatError(f"{where}: cannot parse index vector {text!r}") from e
    return check_permutation(np.asarray(values, dtype=np.int64))


def read_permutation_assignment(path: str) -> PermutationAssignment:
    """Parse and validate an assignment file.

    Raises AssignmentFormatError on syntax problems, duplicate records,
    duplicate or out-of-range indices, or incomplete intra-head groups.
    """
    flat: dict[str, np.ndarray] = {}
    inters: dict[str, np.ndarray] = {}
    intras: dict[str, dict[int, np.ndarray]] = {}

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise AssignmentFormatError(f"{path}:{lineno}: expected '<variable> : <indices>'")
            var_id, _, rest = line.partition(":")
            var_id = var_id.strip()
            vec = _parse_index_vector(rest.strip(), f"{path}:{lineno}")
            if var_id.endswith(".inter"):
                base = var_id[: -len(".inter")]
                if base in inters:
                    raise AssignmentFormatError(f"{path}:{lineno}: duplicate record for {var_id!r}")
                inters[base] = vec
            elif ".intra." in var_id:
                base, _, head = var_id.rpartition(".intra.")
                try:
                    head_idx = int(head)
                except ValueError as e:
                    raise AssignmentFormatError(f"{path}:{lineno}: bad head index in {var_id!r}") from e
                intras.setdefault(base, {})
                if head_idx in intras[base]:
                    raise AssignmentFormatError(f"{path}:{lineno}: duplicate record for {var_id!r}")
                intras[base][head_idx] = vec
            else:
                if var_id in flat:
                    raise AssignmentFormatError(f"{path}:{lineno}: duplicate record for {var_id!r}")
                flat[var_id] = vec

    assignment = PermutationAssignment()
    for base in sorted(set(inters) | set(intras)):
        if base in flat:
            raise AssignmentFormatError(f"{base!r} has both flat and structured records")
        if base not in inters:
            raise AssignmentFormatError(f"{base!r} has intra records but no inter record")
        inter = inters[base]
        heads = intras.get(base, {})
        if sorted(heads) != list(range(inter.size)):
            raise AssignmentFormatError(
                f"{base!r} needs intra records for heads 0..{inter.size - 1}, found {sorted(heads)}"
            )
        bp = BlockPermutation(inter, tuple(heads[h] for h in range(inter.size)))
        assignment.set_block(base, bp)
    for var_id, vec in flat.items():
        assignment.perms[var_id] = vec
    return assignment
