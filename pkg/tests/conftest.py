"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own code paths: assignment
problems are enumerated, singular values come from characteristic-polynomial
roots of the Gram matrix, and permutation application is cross-checked with
dense 0/1 matrices.
"""

import itertools

import numpy as np
import pytest

from taskport.checkpoint import ArchSpec


@pytest.fixture
def toy_arch():
    """The standard desk-scale architecture used across the suite."""
    return ArchSpec(
        n_blocks=2, n_heads=4, embed_dim=32, mlp_hidden=64,
        input_dim=10, output_dim=4, has_layernorm=True,
    )


@pytest.fixture
def small_arch():
    return ArchSpec(
        n_blocks=1, n_heads=2, embed_dim=8, mlp_hidden=12,
        input_dim=5, output_dim=3, has_layernorm=False,
    )


def brute_force_min_assignment(cost: np.ndarray):
    """Enumerate all n! permutations in lexicographic order; strict
    improvement keeps the earliest, so ties resolve exactly like the
    solver's contract."""
    n = cost.shape[0]
    rows = np.arange(n)
    best_perm, best_cost = None, np.inf
    for perm in itertools.permutations(range(n)):
        total = float(np.sum(cost[rows, perm]))
        if total < best_cost:
            best_cost = total
            best_perm = perm
    return np.array(best_perm, dtype=np.int64), best_cost


def charpoly_singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values via Faddeev-LeVerrier characteristic-polynomial roots
    of the smaller Gram matrix.  Independent of any SVD routine."""
    m = np.asarray(m, dtype=np.float64)
    gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    n = gram.shape[0]
    coeffs = [1.0]
    mk = np.eye(n)
    for k in range(1, n + 1):
        mk = gram @ mk
        ck = -np.trace(mk) / k
        coeffs.append(ck)
        mk = mk + ck * np.eye(n)
    eigs = np.roots(coeffs)
    eigs = np.real(eigs)
    eigs[eigs < 0] = 0.0
    sv = np.sqrt(np.sort(eigs)[::-1])
    return sv


def dense_perm_matrix(p) -> np.ndarray:
    """0/1 matrix with ones at (i, p[i]); left-multiplying permutes rows by p."""
    p = np.asarray(p, dtype=np.int64)
    m = np.zeros((p.size, p.size))
    m[np.arange(p.size), p] = 1.0
    return m
