"""Minimal float64 transformer: forward pass, gradients, and a tiny trainer.

This is the reference harness used to certify that permuted weight sets are
functionally equivalent, to draw interpolation (mode-connectivity) curves,
and to drive desk-scale experiments.  Blocks follow the pre-norm-free layout

    z_attn = W0 * MHA(x) + b0
    z_mid  = z_attn + skip1(x)
    z_f    = W2 * relu(W1 * z_mid + b1) + b2
    z_out  = z_f + skip2(z_mid)

with optional post-residual LayerNorm after each sum, mean pooling over the
sequence, and a fixed linear classifier.  ``skip1``/``skip2`` default to
identities; a permuted weight set produced in compose mode supplies its
derived skip permutations instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import (
    KIND_EVAL_BATCH,
    ArchSpec,
    WeightSet,
    read_container,
    require_same_arch,
    write_container,
)
from .coupling import CouplingGraph, apply_assignment
from .errors import MalformedManifestError, NumericalFailureError, ShapeMismatchError
from .perms import PermutationAssignment

_LN_EPS = 1e-5


@dataclass
class EvalBatch:
    """Inputs (n, seq, input_dim) float64 and integer class targets (n,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.inputs.ndim != 3:
            raise ValueError(f"inputs must be (n, seq, input_dim), got {self.inputs.shape}")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError("targets must be one label per input row")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")


@dataclass
class LmcCurve:
    alphas: np.ndarray
    losses: np.ndarray


@dataclass
class EquivalenceReport:
    max_dev: float
    tol: float
    passed: bool


def _layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * istd
    return gain * xhat + bias, (xhat, istd)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(t: np.ndarray, n_heads: int) -> np.ndarray:
    n, s, d_m = t.shape
    return t.reshape(n, s, n_heads, d_m // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t: np.ndarray) -> np.ndarray:
    n, h, s, d_k = t.shape
    return t.transpose(0, 2, 1, 3).reshape(n, s, h * d_k)


def _forward_cached(ws: WeightSet, X: np.ndarray, residual_perms=None):
    arch = ws.arch
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != arch.input_dim:
        raise ShapeMismatchError("inputs", f"expected (n, seq, {arch.input_dim}), got {X.shape}")
    if residual_perms is not None and len(residual_perms) != arch.n_blocks:
        raise ValueError("residual_perms must supply one (skip1, skip2) pair per block")
    scale = 1.0 / np.sqrt(arch.head_dim)

    z = X @ ws["embed.weight"].T
    cache = {"X": X, "blocks": []}
    for i in range(arch.n_blocks):
        b = f"block.{i}"
        c = {"x_in": z}
        q = z @ ws[f"{b}.attn.q.weight"].T + ws[f"{b}.attn.q.bias"]
        k = z @ ws[f"{b}.attn.k.weight"].T + ws[f"{b}.attn.k.bias"]
        v = z @ ws[f"{b}.attn.v.weight"].T + ws[f"{b}.attn.v.bias"]
        qh, kh, vh = (_split_heads(t, arch.n_heads) for t in (q, k, v))
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        attn = _softmax(scores)
        o = _merge_heads(attn @ vh)
        c.update(qh=qh, kh=kh, vh=vh, attn=attn, o=o)

        z_attn = o @ ws[f"{b}.attn.out.weight"].T + ws[f"{b}.attn.out.bias"]
        skip1 = c["x_in"] if residual_perms is None else c["x_in"][..., residual_perms[i][0]]
        z_mid = z_attn + skip1
        if not np.all(np.isfinite(z_mid)):
            raise NumericalFailureError(f"non-finite activations in block {i}")
        if arch.has_layernorm:
            z_mid, c["ln1"] = _layernorm(z_mid, ws[f"{b}.ln1.gain"], ws[f"{b}.ln1.bias"])
        c["z_mid"] = z_mid

        a1 = z_mid @ ws[f"{b}.mlp.fc1.weight"].T + ws[f"{b}.mlp.fc1.bias"]
        h1 = np.maximum(a1, 0.0)
        z_f = h1 @ ws[f"{b}.mlp.fc2.weight"].T + ws[f"{b}.mlp.fc2.bias"]
        skip2 = z_mid if residual_perms is None else z_mid[..., residual_perms[i][1]]
        z_out = z_f + skip2
        if not np.all(np.isfinite(z_out)):
            raise NumericalFailureError(f"non-finite activations in block {i}")
        if arch.has_layernorm:
            z_out, c["ln2"] = _layernorm(z_out, ws[f"{b}.ln2.gain"], ws[f"{b}.ln2.bias"])
        c.update(a1=a1, h1=h1)
        if not np.all(np.isfinite(z_out)):
            raise NumericalFailureError(f"non-finite activations in block {i}")
        cache["blocks"].append(c)
        z = z_out

    pooled = z.mean(axis=1)
    logits = pooled @ ws["head.weight"].T
    cache["z_final"] = z
    cache["pooled"] = pooled
    return logits, cache


def forward(ws: WeightSet, X: np.ndarray, residual_perms=None) -> np.ndarray:
    """Class logits, shape (n, output_dim).  Deterministic, float64."""
    logits, _ = _forward_cached(ws, X, residual_perms)
    return logits


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    targets = np.asarray(targets, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    picked = shifted[np.arange(len(targets)), targets]
    return float(np.mean(logz - picked))


def batch_loss(ws: WeightSet, batch: EvalBatch) -> float:
    if batch.targets.min() < 0 or batch.targets.max() >= ws.arch.output_dim:
        raise ValueError("targets out of range for arch output_dim")
    return cross_entropy(forward(ws, batch.inputs), batch.targets)


def _ln_backward(dy, gain, ln_cache):
    xhat, istd = ln_cache
    dgain = np.sum(dy * xhat, axis=(0, 1))
    dbias = np.sum(dy, axis=(0, 1))
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * istd
    return dx, dgain, dbias


def _linear_backward(dy, x, w):
    # y = x @ w.T + b with x (..., in), w (out, in)
    dy2 = dy.reshape(-1, dy.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


def loss_and_grads(ws: WeightSet, batch: EvalBatch) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and analytic gradients for every tensor.

    Gradients are for the plain model (identity skips); training never sees
    composed residual permutations.
    """
    arch = ws.arch
    logits, cache = _forward_cached(ws, batch.inputs)
    n = len(batch.targets)
    loss = cross_entropy(logits, batch.targets)

    probs = _softmax(logits)
    probs[np.arange(n), batch.targets] -= 1.0
    dlogits = probs / n

    grads: dict[str, np.ndarray] = {}
    dpooled, grads["head.weight"], _ = _linear_backward(dlogits, cache["pooled"], ws["head.weight"])
    seq_len = cache["z_final"].shape[1]
    dz = np.repeat(dpooled[:, None, :], seq_len, axis=1) / seq_len

    scale = 1.0 / np.sqrt(arch.head_dim)
    for i in reversed(range(arch.n_blocks)):
        b = f"block.{i}"
        c = cache["blocks"][i]
        if arch.has_layernorm:
            dz, grads[f"{b}.ln2.gain"], grads[f"{b}.ln2.bias"] = _ln_backward(
                dz, ws[f"{b}.ln2.gain"], c["ln2"]
            )
        dz_mid = dz  # through skip2
        dh1, grads[f"{b}.mlp.fc2.weight"], grads[f"{b}.mlp.fc2.bias"] = _linear_backward(
            dz, c["h1"], ws[f"{b}.mlp.fc2.weight"]
        )
        da1 = dh1 * (c["a1"] > 0.0)
        dx1, grads[f"{b}.mlp.fc1.weight"], grads[f"{b}.mlp.fc1.bias"] = _linear_backward(
            da1, c["z_mid"], ws[f"{b}.mlp.fc1.weight"]
        )
        dz_mid = dz_mid + dx1
        if arch.has_layernorm:
            dz_mid, grads[f"{b}.ln1.gain"], grads[f"{b}.ln1.bias"] = _ln_backward(
                dz_mid, ws[f"{b}.ln1.gain"], c["ln1"]
            )
        dx_skip = dz_mid  # through skip1
        do, grads[f"{b}.attn.out.weight"], grads[f"{b}.attn.out.bias"] = _linear_backward(
            dz_mid, c["o"], ws[f"{b}.attn.out.weight"]
        )

        doh = _split_heads(do, arch.n_heads)
        dattn = doh @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["attn"].transpose(0, 1, 3, 2) @ doh
        dscores = c["attn"] * (dattn - np.sum(dattn * c["attn"], axis=-1, keepdims=True))
        dqh = (dscores @ c["kh"]) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ c["qh"]) * scale

        dx_attn = np.zeros_like(c["x_in"])
        for proj, dth in (("q", dqh), ("k", dkh), ("v", dvh)):
            dt = _merge_heads(dth)
            dxp, grads[f"{b}.attn.{proj}.weight"], grads[f"{b}.attn.{proj}.bias"] = _linear_backward(
                dt, c["x_in"], ws[f"{b}.attn.{proj}.weight"]
            )
            dx_attn += dxp
        dz = dx_skip + dx_attn

    _, grads["embed.weight"], _ = _linear_backward(dz, cache["X"], ws["embed.weight"])
    return loss, grads


def init_random(arch: ArchSpec, seed: int) -> WeightSet:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases, unit LN gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in arch.tensor_shapes().items():
        if len(shape) == 2:
            fan_in = shape[1]
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return WeightSet(arch, tensors)


def train_toy(ws: WeightSet, batch: EvalBatch, steps: int, lr: float) -> WeightSet:
    """Full-batch gradient descent on cross-entropy; deterministic."""
    current = ws.copy()
    for step in range(steps):
        try:
            loss, grads = loss_and_grads(current, batch)
        except NumericalFailureError as e:
            raise NumericalFailureError(f"training diverged at step {step}: {e}") from e
        if not np.isfinite(loss):
            raise NumericalFailureError(f"training diverged at step {step}: loss={loss}")
        for name, g in grads.items():
            current.tensors[name] = current.tensors[name] - lr * g
    return current


def verify_equivalence(
    ws: WeightSet,
    graph: CouplingGraph,
    assignment: PermutationAssignment,
    n_samples: int = 100,
    tol: float = 1e-8,
    seed: int = 0,
    seq_len: int = 8,
) -> EquivalenceReport:
    """Compare the model against its permuted self on random inputs.

    The permuted model runs with the skip permutations its residual mode
    requires (identities in tie mode).  The classifier's column coupling
    undoes the final stream permutation, so outputs must agree directly.
    """
    permuted = apply_assignment(ws, graph, assignment)
    skips = graph.residual_perms(assignment)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_samples, seq_len, ws.arch.input_dim))
    ref = forward(ws, X)
    out = forward(permuted, X, residual_perms=skips)
    max_dev = float(np.max(np.abs(out - ref)))
    return EquivalenceReport(max_dev=max_dev, tol=tol, passed=max_dev <= tol)


def lmc_curve(ws_left: WeightSet, ws_right: WeightSet, batch: EvalBatch, n_points: int = 11) -> LmcCurve:
    """Loss along the straight line between two weight sets.

    The endpoints reuse the exact interpolation code path, so they equal the
    standalone losses bit for bit.
    """
    require_same_arch(ws_left.arch, ws_right.arch, "interpolation endpoints")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    alphas = np.linspace(0.0, 1.0, n_points)
    losses = np.empty(n_points)
    for idx, alpha in enumerate(alphas):
        mixed = {
            name: (1.0 - alpha) * ws_left.tensors[name] + alpha * ws_right.tensors[name]
            for name in ws_left.tensors
        }
        losses[idx] = batch_loss(WeightSet(ws_left.arch, mixed), batch)
    return LmcCurve(alphas=alphas, losses=losses)


def make_random_batch(arch: ArchSpec, n: int, seq_len: int, seed: int) -> EvalBatch:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, seq_len, arch.input_dim))
    y = rng.integers(0, arch.output_dim, size=n)
    return EvalBatch(X, y)


def make_blob_batch(arch: ArchSpec, n: int, seq_len: int, seed: int, spread: float = 3.0) -> EvalBatch:
    """Linearly-separable-ish synthetic task: one Gaussian blob per class."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(arch.output_dim, arch.input_dim)) * spread
    y = np.arange(n) % arch.output_dim
    X = means[y][:, None, :] + rng.normal(size=(n, seq_len, arch.input_dim))
    return EvalBatch(X, y)


def write_eval_batch(batch: EvalBatch, arch: ArchSpec, path: str) -> None:
    tensors = {"inputs": batch.inputs, "targets": batch.targets.astype(np.float64)}
    write_container(path, arch, KIND_EVAL_BATCH, tensors)


def read_eval_batch(path: str) -> tuple[EvalBatch, ArchSpec]:
    arch, _, tensors = read_container(path, expect_kind=KIND_EVAL_BATCH)
    if "inputs" not in tensors or "targets" not in tensors:
        raise MalformedManifestError("eval batch needs 'inputs' and 'targets' tensors")
    inputs = tensors["inputs"]
    raw_targets = tensors["targets"]
    targets = raw_targets.astype(np.int64)
    if not np.array_equal(targets.astype(np.float64), raw_targets):
        raise MalformedManifestError("targets are not exactly integral")
    if inputs.ndim != 3 or inputs.shape[2] != arch.input_dim:
        raise ShapeMismatchError("inputs", f"expected (n, seq, {arch.input_dim}), got {inputs.shape}")
    if targets.min() < 0 or targets.max() >= arch.output_dim:
        raise MalformedManifestError("targets out of range for arch output_dim")
    return EvalBatch(inputs, targets), arch
