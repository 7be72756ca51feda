"""Coupling graph: which permutation variable acts on which tensor axis.

The graph fixes, for a given architecture, the complete bookkeeping needed to
permute a weight set without changing its function:

* each 2-D tensor has its rows owned by at most one variable (applied as the
  forward matrix ``P``) and its columns by at most one variable (applied as
  the transpose ``P^T``);
* 1-D tensors (biases, layernorm gains) ride along with their row variable;
* the classifier rows and the model input columns are never permuted.

Residual handling comes in two modes.  ``compose`` keeps an independent
variable for the attention output and the MLP output of every block and
derives, per block, the two skip-connection permutations that keep both
residual addends coherent.  ``tie`` aliases the whole residual stream -
embedding output, attention output, MLP output, block after block - to one
shared variable, so the permuted model keeps plain identity skips.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import ArchSpec, TaskVector, WeightSet
from .errors import IncompleteAssignmentError, UnknownVariableError
from .perms import (
    BlockPermutation,
    Perm,
    PermutationAssignment,
    check_permutation,
    compose,
    identity,
    inverse,
    random_permutation,
)

RESIDUAL_COMPOSE = "compose"
RESIDUAL_TIE = "tie"


class Axis(enum.Enum):
    ROWS = "rows"
    COLS = "cols"


class Direction(enum.Enum):
    FORWARD = "P"
    TRANSPOSE = "PT"


@dataclass(frozen=True)
class PermutationVariable:
    id: str
    size: int
    is_attention: bool = False


@dataclass(frozen=True)
class Application:
    tensor: str
    axis: Axis
    variable: str
    direction: Direction


@dataclass
class CouplingGraph:
    arch: ArchSpec
    residual_mode: str
    variables: dict[str, PermutationVariable]
    applications: list[Application]
    pinned: frozenset[str]
    _by_tensor: dict[str, list[Application]] = field(default_factory=dict, repr=False)
    _by_variable: dict[str, list[Application]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_tensor = {}
        self._by_variable = {}
        for app in self.applications:
            self._by_tensor.setdefault(app.tensor, []).append(app)
            self._by_variable.setdefault(app.variable, []).append(app)

    # -- structure queries ---------------------------------------------------

    def applications_on(self, tensor: str) -> list[Application]:
        return self._by_tensor.get(tensor, [])

    def applications_of(self, variable: str) -> list[Application]:
        return self._by_variable.get(variable, [])

    def free_variables(self) -> list[str]:
        return [v for v in self.variables if v not in self.pinned]

    def attention_variable(self, block: int) -> str:
        return f"block.{block}.attn"

    def stream_in_variable(self, block: int) -> str:
        if self.residual_mode == RESIDUAL_TIE:
            return "stream"
        return "embed.out" if block == 0 else f"block.{block - 1}.mlp_out"

    def attn_out_variable(self, block: int) -> str:
        return "stream" if self.residual_mode == RESIDUAL_TIE else f"block.{block}.attn_out"

    def mlp_out_variable(self, block: int) -> str:
        return "stream" if self.residual_mode == RESIDUAL_TIE else f"block.{block}.mlp_out"

    # -- assignments -----------------------------------------------------------

    def identity_assignment(self) -> PermutationAssignment:
        a = PermutationAssignment()
        for var in self.variables.values():
            if var.is_attention:
                a.set_block(var.id, BlockPermutation.identity(self.arch.n_heads, self.arch.head_dim))
            else:
                a.perms[var.id] = identity(var.size)
        return a

    def random_assignment(self, rng: np.random.Generator, include_pinned: bool = False) -> PermutationAssignment:
        """Random structured assignment; pinned variables stay identity unless asked."""
        a = self.identity_assignment()
        for var in self.variables.values():
            if var.id in self.pinned and not include_pinned:
                continue
            if var.is_attention:
                inter = random_permutation(self.arch.n_heads, rng)
                intras = tuple(
                    random_permutation(self.arch.head_dim, rng) for _ in range(self.arch.n_heads)
                )
                a.set_block(var.id, BlockPermutation(inter, intras))
            else:
                a.perms[var.id] = random_permutation(var.size, rng)
        return a

    def check_assignment(self, assignment: PermutationAssignment) -> None:
        missing = [v for v in self.variables if v not in assignment.perms]
        if missing:
            raise IncompleteAssignmentError(f"assignment is missing variables: {missing}")
        unknown = [v for v in assignment.perms if v not in self.variables]
        if unknown:
            raise UnknownVariableError(f"assignment names unknown variables: {unknown}")
        for var_id, var in self.variables.items():
            check_permutation(assignment.perms[var_id], size=var.size)

    def residual_perms(self, assignment: PermutationAssignment) -> list[tuple[Perm, Perm]]:
        """Per block, the two skip permutations of the permuted model.

        In compose mode the first skip becomes ``p_in^-1 ∘ p_w0`` (undo the
        incoming stream permutation, then re-apply the attention-output one)
        and the second ``p_w0^-1 ∘ p_w2``.  In tie mode both are identities.
        """
        perms = []
        d_m = self.arch.embed_dim
        for i in range(self.arch.n_blocks):
            if self.residual_mode == RESIDUAL_TIE:
                perms.append((identity(d_m), identity(d_m)))
                continue
            p_in = assignment.perms[self.stream_in_variable(i)]
            p_w0 = assignment.perms[self.attn_out_variable(i)]
            p_w2 = assignment.perms[self.mlp_out_variable(i)]
            skip_attn = compose(inverse(p_in), p_w0)
            skip_mlp = compose(inverse(p_w0), p_w2)
            perms.append((skip_attn, skip_mlp))
        return perms

    def dump_table(self) -> str:
        """Human-readable application table, one line per (tensor, axis)."""
        lines = [f"# residual_mode={self.residual_mode} arch={self.arch.to_json_dict()}"]
        for var in self.variables.values():
            tag = " pinned" if var.id in self.pinned else ""
            kind = " attention" if var.is_attention else ""
            lines.append(f"var {var.id} size={var.size}{kind}{tag}")
        for app in self.applications:
            lines.append(
                f"{app.tensor:<28} {app.axis.value:<4} <- {app.direction.value:<2} {app.variable}"
            )
        return "\n".join(lines)


def build_coupling_graph(
    arch: ArchSpec,
    residual_mode: str = RESIDUAL_COMPOSE,
    pin_embedding: bool = True,
) -> CouplingGraph:
    """Wire the permutation variables of a transformer weight set.

    ``pin_embedding`` keeps the permutation of the embedding output (the
    model's first hidden representation) at identity, which is what transport
    onto a positionally meaningful input expects; unpin it for pure
    re-basin experiments.
    """
    if residual_mode not in (RESIDUAL_COMPOSE, RESIDUAL_TIE):
        raise ValueError(f"residual_mode must be 'compose' or 'tie', got {residual_mode!r}")
    d_m, d_h = arch.embed_dim, arch.mlp_hidden
    variables: dict[str, PermutationVariable] = {}
    apps: list[Application] = []

    def add_var(var_id: str, size: int, is_attention: bool = False) -> str:
        if var_id not in variables:
            variables[var_id] = PermutationVariable(var_id, size, is_attention)
        return var_id

    def rows(tensor: str, var_id: str) -> None:
        apps.append(Application(tensor, Axis.ROWS, var_id, Direction.FORWARD))

    def cols(tensor: str, var_id: str) -> None:
        apps.append(Application(tensor, Axis.COLS, var_id, Direction.TRANSPOSE))

    tie = residual_mode == RESIDUAL_TIE
    if tie:
        stream = add_var("stream", d_m)
    else:
        stream = add_var("embed.out", d_m)
    rows("embed.weight", stream)

    in_var = stream
    for i in range(arch.n_blocks):
        b = f"block.{i}"
        attn = add_var(f"{b}.attn", d_m, is_attention=True)
        w0 = stream if tie else add_var(f"{b}.attn_out", d_m)
        hidden = add_var(f"{b}.mlp_hidden", d_h)
        w2 = stream if tie else add_var(f"{b}.mlp_out", d_m)

        for proj in ("q", "k", "v"):
            rows(f"{b}.attn.{proj}.weight", attn)
            cols(f"{b}.attn.{proj}.weight", in_var)
            rows(f"{b}.attn.{proj}.bias", attn)
        rows(f"{b}.attn.out.weight", w0)
        cols(f"{b}.attn.out.weight", attn)
        rows(f"{b}.attn.out.bias", w0)
        if arch.has_layernorm:
            rows(f"{b}.ln1.gain", w0)
            rows(f"{b}.ln1.bias", w0)
        rows(f"{b}.mlp.fc1.weight", hidden)
        cols(f"{b}.mlp.fc1.weight", w0)
        rows(f"{b}.mlp.fc1.bias", hidden)
        rows(f"{b}.mlp.fc2.weight", w2)
        cols(f"{b}.mlp.fc2.weight", hidden)
        rows(f"{b}.mlp.fc2.bias", w2)
        if arch.has_layernorm:
            rows(f"{b}.ln2.gain", w2)
            rows(f"{b}.ln2.bias", w2)
        in_var = w2

    cols("head.weight", in_var)  # classifier rows stay fixed: class order is meaningful

    pinned = frozenset({stream} if pin_embedding else set())
    return CouplingGraph(arch, residual_mode, variables, apps, pinned)


def _apply_to_array(arr: np.ndarray, apps: list[Application], assignment: PermutationAssignment) -> np.ndarray:
    out = arr
    for app in apps:
        p = assignment.perms[app.variable]
        if app.direction is Direction.TRANSPOSE and app.axis is Axis.ROWS:
            p = inverse(p)
        if app.direction is Direction.FORWARD and app.axis is Axis.COLS:
            p = inverse(p)
        if out.ndim == 1:
            out = out[p]
        elif app.axis is Axis.ROWS:
            out = out[p, :]
        else:
            out = out[:, p]
    return out


def apply_assignment(ws, graph: CouplingGraph, assignment: PermutationAssignment):
    """Permute a WeightSet or TaskVector according to the graph's wiring.

    Pure index moves: exact, invertible, and linear over the tensor values.
    """
    graph.check_assignment(assignment)
    out = {}
    for name, arr in ws.tensors.items():
        out[name] = _apply_to_array(arr, graph.applications_on(name), assignment).copy()
    kind = WeightSet if isinstance(ws, WeightSet) else TaskVector
    return kind(ws.arch, out)


def inverse_assignment(graph: CouplingGraph, assignment: PermutationAssignment) -> PermutationAssignment:
    """Variable-wise inverse; applying it after the original restores any input."""
    graph.check_assignment(assignment)
    inv = PermutationAssignment()
    for var_id, p in assignment.perms.items():
        inv.perms[var_id] = inverse(p)
    return inv
