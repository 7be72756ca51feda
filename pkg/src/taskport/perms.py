"""Permutations as index vectors, plus the structured block form used for attention.

A permutation of size n is a 1-D int64 array ``p`` that is a bijection on
``{0..n-1}``.  Applied to the rows of a matrix it acts as ``out[i] = src[p[i]]``,
i.e. the dense matrix with a one at ``(i, p[i])`` left-multiplying ``src``.
Composition and inversion are exact index operations; no permutation is ever
materialized as a dense 0/1 matrix outside of small test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssignmentFormatError

Perm = np.ndarray


def identity(n: int) -> Perm:
    if n < 1:
        raise ValueError(f"permutation size must be >= 1, got {n}")
    return np.arange(n, dtype=np.int64)


def check_permutation(p, size: int | None = None) -> Perm:
    """Validate and return ``p`` as an int64 index vector.

    Raises AssignmentFormatError on duplicate or out-of-range indices, or when
    the length does not match ``size``.
    """
    arr = np.asarray(p, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise AssignmentFormatError(f"permutation must be a non-empty 1-D index vector, got shape {arr.shape}")
    n = arr.size
    if size is not None and n != size:
        raise AssignmentFormatError(f"permutation has length {n}, expected {size}")
    if arr.min() < 0 or arr.max() >= n:
        raise AssignmentFormatError(f"permutation index out of range 0..{n - 1}: {arr.tolist()}")
    seen = np.zeros(n, dtype=bool)
    seen[arr] = True
    if not seen.all():
        raise AssignmentFormatError(f"duplicate index in permutation: {arr.tolist()}")
    return arr


def is_identity(p: Perm) -> bool:
    return bool(np.array_equal(p, np.arange(len(p))))


def compose(a: Perm, b: Perm) -> Perm:
    """Return a∘b, i.e. the permutation mapping i to a[b[i]]."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size != b.size:
        raise ValueError(f"cannot compose permutations of sizes {a.size} and {b.size}")
    return a[b]


def inverse(a: Perm) -> Perm:
    """Return the permutation q with a[q[i]] == i for all i."""
    return np.argsort(np.asarray(a, dtype=np.int64), kind="stable").astype(np.int64)


def random_permutation(n: int, rng: np.random.Generator) -> Perm:
    return rng.permutation(n).astype(np.int64)


@dataclass(frozen=True)
class BlockPermutation:
    """A head-respecting permutation of an attention block's output units.

    ``inter`` (length H) reorders whole heads: destination head i is source
    head ``inter[i]``.  ``intras[i]`` (length d_k) reorders the units within
    destination head i relative to its source head.  The flattened form is a
    single permutation of size H*d_k that never mixes units across head
    boundaries.
    """

    inter: Perm
    intras: tuple[Perm, ...]

    def __post_init__(self):
        inter = check_permutation(self.inter)
        object.__setattr__(self, "inter", inter)
        if len(self.intras) != inter.size:
            raise AssignmentFormatError(
                f"expected {inter.size} intra-head permutations, got {len(self.intras)}"
            )
        d_k = None
        checked = []
        for h, intra in enumerate(self.intras):
            intra = check_permutation(intra, size=d_k)
            d_k = intra.size
            checked.append(intra)
        object.__setattr__(self, "intras", tuple(checked))

    @property
    def n_heads(self) -> int:
        return int(self.inter.size)

    @property
    def head_dim(self) -> int:
        return int(self.intras[0].size)

    @property
    def size(self) -> int:
        return self.n_heads * self.head_dim

    def flattened(self) -> Perm:
        """Single permutation on H*d_k: unit r of destination head i maps to
        unit intras[i][r] of source head inter[i]."""
        d_k = self.head_dim
        return np.concatenate(
            [self.inter[i] * d_k + self.intras[i] for i in range(self.n_heads)]
        ).astype(np.int64)

    @staticmethod
    def identity(n_heads: int, head_dim: int) -> "BlockPermutation":
        return BlockPermutation(
            identity(n_heads), tuple(identity(head_dim) for _ in range(n_heads))
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockPermutation):
            return NotImplemented
        return np.array_equal(self.inter, other.inter) and all(
            np.array_equal(a, b) for a, b in zip(self.intras, other.intras)
        )


@dataclass
class PermutationAssignment:
    """Maps permutation-variable ids to index vectors.

    For attention variables the flattened permutation always lives in ``perms``;
    the structured (inter, intras) detail is kept alongside in ``blocks`` when
    known, so files can round-trip the head structure and theorem-level checks
    can inspect it.
    """

    perms: dict[str, Perm] = field(default_factory=dict)
    blocks: dict[str, BlockPermutation] = field(default_factory=dict)

    def set_block(self, var_id: str, bp: BlockPermutation) -> None:
        self.blocks[var_id] = bp
        self.perms[var_id] = bp.flattened()

    def copy(self) -> "PermutationAssignment":
        return PermutationAssignment(
            {k: v.copy() for k, v in self.perms.items()}, dict(self.blocks)
        )

    def variable_ids(self) -> list[str]:
        return sorted(self.perms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PermutationAssignment):
            return NotImplemented
        if set(self.perms) != set(other.perms):
            return False
        return all(np.array_equal(self.perms[k], other.perms[k]) for k in self.perms)
