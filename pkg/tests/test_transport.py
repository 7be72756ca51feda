"""Task-vector algebra and transport."""

import numpy as np
import pytest

from taskport.checkpoint import ArchSpec, TaskVector, WeightSet
from taskport.coupling import apply_assignment, build_coupling_graph
from taskport.errors import ArchMismatchError
from taskport.model import init_random
from taskport.transport import ScalingSpec, compute_task_vector, merge_task_vectors, transport


@pytest.fixture
def setup(toy_arch):
    base = init_random(toy_arch, 0)
    finetuned = WeightSet(
        toy_arch,
        {n: a + 0.05 * np.random.default_rng(1).normal(size=a.shape) for n, a in base.tensors.items()},
    )
    graph = build_coupling_graph(toy_arch, "compose")
    assignment = graph.random_assignment(np.random.default_rng(2))
    return base, finetuned, graph, assignment


class TestComputeTaskVector:
    def test_same_model_gives_zero(self, toy_arch):
        ws = init_random(toy_arch, 3)
        tv = compute_task_vector(ws, ws)
        for arr in tv.tensors.values():
            assert np.all(arr == 0.0)

    def test_additive_inverse(self, setup):
        base, finetuned, _, _ = setup
        tv = compute_task_vector(finetuned, base)
        rebuilt = {n: base.tensors[n] + tv.tensors[n] for n in base.tensors}
        for name in base.tensors:
            np.testing.assert_array_equal(rebuilt[name], finetuned.tensors[name])

    def test_commutes_with_permutation(self, setup):
        """pi(finetuned) - pi(base) == pi(finetuned - base), exactly."""
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        moved_tv = apply_assignment(tv, graph, assignment)
        direct = compute_task_vector(
            apply_assignment(finetuned, graph, assignment),
            apply_assignment(base, graph, assignment),
        )
        for name in tv.tensors:
            np.testing.assert_array_equal(moved_tv.tensors[name], direct.tensors[name])

    def test_arch_mismatch(self, toy_arch):
        other = init_random(ArchSpec(1, 2, 8, 16, 4, 3), 4)
        with pytest.raises(ArchMismatchError):
            compute_task_vector(init_random(toy_arch, 5), other)


class TestTransport:
    def test_alpha_zero_is_base(self, setup):
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        out = transport(base, tv, graph, assignment, scaling=0.0)
        for name in base.tensors:
            np.testing.assert_array_equal(out.tensors[name], base.tensors[name])

    def test_identity_assignment_alpha_one_is_vanilla_addition(self, setup):
        base, finetuned, graph, _ = setup
        tv = compute_task_vector(finetuned, base)
        out = transport(base, tv, graph, graph.identity_assignment(), scaling=1.0)
        for name in base.tensors:
            np.testing.assert_array_equal(
                out.tensors[name], base.tensors[name] + tv.tensors[name]
            )

    def test_transport_linearity(self, setup):
        """transport == base + alpha * permuted vector, tensor-exact."""
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        moved = apply_assignment(tv, graph, assignment)
        for alpha in (0.25, 1.0, 2.0):
            out = transport(base, tv, graph, assignment, scaling=alpha)
            for name in base.tensors:
                np.testing.assert_array_equal(
                    out.tensors[name], base.tensors[name] + alpha * moved.tensors[name]
                )

    def test_negative_alpha_rejected(self, setup):
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        with pytest.raises(ValueError):
            transport(base, tv, graph, assignment, scaling=-0.5)

    def test_per_block_scaling(self, setup, toy_arch):
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        spec = ScalingSpec.per_block_factors([0.5, 2.0])
        out = transport(base, tv, graph, assignment, scaling=spec)
        moved = apply_assignment(tv, graph, assignment)
        np.testing.assert_array_equal(
            out.tensors["embed.weight"],
            base.tensors["embed.weight"] + 0.5 * moved.tensors["embed.weight"],
        )
        np.testing.assert_array_equal(
            out.tensors["head.weight"],
            base.tensors["head.weight"] + 2.0 * moved.tensors["head.weight"],
        )
        np.testing.assert_array_equal(
            out.tensors["block.1.mlp.fc1.weight"],
            base.tensors["block.1.mlp.fc1.weight"] + 2.0 * moved.tensors["block.1.mlp.fc1.weight"],
        )

    def test_per_block_length_checked(self, setup):
        base, finetuned, graph, assignment = setup
        tv = compute_task_vector(finetuned, base)
        with pytest.raises(ValueError):
            transport(base, tv, graph, assignment, ScalingSpec.per_block_factors([1.0]))

    def test_one_assignment_reused_without_rematching(self, setup, monkeypatch):
        """Transport must never call the matcher; the assignment is reusable
        across any number of task vectors."""
        import taskport.matching as matching_mod

        calls = {"n": 0}
        original = matching_mod.weight_match

        def counting(*args, **kwargs):
            calls["n"] += 1
            return original(*args, **kwargs)

        monkeypatch.setattr(matching_mod, "weight_match", counting)
        base, finetuned, graph, assignment = setup
        rng = np.random.default_rng(6)
        for k in range(3):
            delta = TaskVector(
                base.arch,
                {n: rng.normal(size=a.shape) * 0.01 for n, a in base.tensors.items()},
            )
            transport(base, delta, graph, assignment, scaling=1.0)
        assert calls["n"] == 0


class TestMergeTaskVectors:
    def test_single_vector_weight_one(self, setup):
        base, finetuned, _, _ = setup
        tv = compute_task_vector(finetuned, base)
        merged = merge_task_vectors([tv], [1.0])
        for name in tv.tensors:
            np.testing.assert_array_equal(merged.tensors[name], tv.tensors[name])

    def test_vector_and_negation_cancel(self, setup):
        base, finetuned, _, _ = setup
        tv = compute_task_vector(finetuned, base)
        neg = TaskVector(tv.arch, {n: -a for n, a in tv.tensors.items()})
        merged = merge_task_vectors([tv, neg], [1.0, 1.0])
        for arr in merged.tensors.values():
            assert np.all(arr == 0.0)

    def test_merge_commutes_with_permutation(self, setup):
        base, finetuned, graph, assignment = setup
        rng = np.random.default_rng(7)
        tvs = [
            TaskVector(base.arch, {n: rng.normal(size=a.shape) for n, a in base.tensors.items()})
            for _ in range(3)
        ]
        weights = [0.5, -1.0, 2.0]
        merged_then_moved = apply_assignment(merge_task_vectors(tvs, weights), graph, assignment)
        moved_then_merged = merge_task_vectors(
            [apply_assignment(tv, graph, assignment) for tv in tvs], weights
        )
        for name in merged_then_moved.tensors:
            np.testing.assert_allclose(
                merged_then_moved.tensors[name], moved_then_merged.tensors[name], atol=0
            )

    def test_count_mismatch(self, setup):
        base, finetuned, _, _ = setup
        tv = compute_task_vector(finetuned, base)
        with pytest.raises(ValueError):
            merge_task_vectors([tv], [1.0, 2.0])
