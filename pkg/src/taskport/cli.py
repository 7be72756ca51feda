"""Command-line front end.

Exit codes are stable for scripting: 0 success, 1 I/O or format problem,
2 architecture mismatch, 3 matcher hit its sweep cap (assignment still
written), 4 verification failed.  All randomness flows from ``--seed``, so
every subcommand is reproducible; no subcommand mutates its inputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import (
    read_checkpoint,
    read_permutation_assignment,
    read_task_vector,
    write_checkpoint,
    write_permutation_assignment,
    write_task_vector,
)
from .coupling import apply_assignment, build_coupling_graph
from .errors import ArchMismatchError, TaskportError
from .matching import MatchOptions, format_trace, recovery_fraction, weight_match
from .model import (
    init_random,
    lmc_curve,
    make_blob_batch,
    read_eval_batch,
    train_toy,
    verify_equivalence,
    write_eval_batch,
)
from .transport import ScalingSpec, compute_task_vector, transport

EXIT_OK = 0
EXIT_IO = 1
EXIT_ARCH = 2
EXIT_NO_CONVERGENCE = 3
EXIT_VERIFY_FAIL = 4


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _read_alpha(args) -> ScalingSpec:
    if args.alpha_file is not None:
        with open(args.alpha_file, "r", encoding="utf-8") as f:
            values = [float(line.strip()) for line in f if line.strip()]
        return ScalingSpec.per_block_factors(values)
    return ScalingSpec.uniform(args.alpha)


def cmd_match(args) -> int:
    model_a = read_checkpoint(args.model_a)
    model_b = read_checkpoint(args.model_b)
    graph = build_coupling_graph(
        model_a.arch, args.residual_mode, pin_embedding=not args.unpin_embedding
    )
    if args.dump_graph:
        print(graph.dump_table())
    opts = MatchOptions(
        max_sweeps=args.max_sweeps,
        seed=args.seed,
        p_norm=args.p_norm,
        include_w0_in_intra=args.include_w0_intra,
    )
    result = weight_match(model_a, model_b, graph, opts)
    write_permutation_assignment(result.assignment, args.out)
    if args.trace:
        _atomic_write_text(args.trace, format_trace(result))
    if not result.converged:
        print(f"hit sweep cap ({opts.max_sweeps}) before convergence", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"converged in {result.n_sweeps} sweeps; objective {result.trace[-1]:.12g}")
    return EXIT_OK


def cmd_apply(args) -> int:
    model = read_checkpoint(args.model)
    assignment = read_permutation_assignment(args.perm)
    graph = build_coupling_graph(
        model.arch, args.residual_mode, pin_embedding=not args.unpin_embedding
    )
    if args.dump_graph:
        print(graph.dump_table())
    write_checkpoint(apply_assignment(model, graph, assignment), args.out)
    return EXIT_OK


def cmd_task_vector(args) -> int:
    finetuned = read_checkpoint(args.finetuned)
    base = read_checkpoint(args.base)
    write_task_vector(compute_task_vector(finetuned, base), args.out)
    return EXIT_OK


def cmd_transport(args) -> int:
    base = read_checkpoint(args.base)
    tv = read_task_vector(args.task_vector)
    assignment = read_permutation_assignment(args.perm)
    graph = build_coupling_graph(
        base.arch, args.residual_mode, pin_embedding=not args.unpin_embedding
    )
    scaling = _read_alpha(args)
    write_checkpoint(transport(base, tv, graph, assignment, scaling), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    model = read_checkpoint(args.model)
    assignment = read_permutation_assignment(args.perm)
    graph = build_coupling_graph(
        model.arch, args.residual_mode, pin_embedding=not args.unpin_embedding
    )
    report = verify_equivalence(
        model, graph, assignment, n_samples=args.samples, tol=args.tol, seed=args.seed
    )
    print(f"max deviation {report.max_dev:.6g} (tol {report.tol:g})")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAIL


def cmd_lmc(args) -> int:
    model_a = read_checkpoint(args.model_a)
    model_b = read_checkpoint(args.model_b)
    batch, _ = read_eval_batch(args.batch)
    curve = lmc_curve(model_a, model_b, batch, n_points=args.points)
    rows = ["alpha,loss"] + [
        f"{a:.12g},{l:.12g}" for a, l in zip(curve.alphas, curve.losses)
    ]
    _atomic_write_text(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_demo(args) -> int:
    """End-to-end pipeline on synthetic models: train a toy model, hide it
    behind a random structured permutation plus noise, re-discover the
    permutation, certify equivalence, and compare interpolation curves."""
    from .checkpoint import ArchSpec

    arch = ArchSpec(
        n_blocks=args.blocks,
        n_heads=args.heads,
        embed_dim=args.embed_dim,
        mlp_hidden=args.mlp_hidden,
        input_dim=args.input_dim,
        output_dim=args.output_dim,
        has_layernorm=args.layernorm,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    report: list[str] = [
        f"seed: {args.seed}",
        f"noise: {args.noise:.12g}",
        f"arch: {arch.to_json_dict()}",
    ]

    batch = make_blob_batch(arch, n=64, seq_len=8, seed=args.seed + 1)
    model_a = train_toy(init_random(arch, args.seed), batch, steps=args.train_steps, lr=args.train_lr)
    write_checkpoint(model_a, os.path.join(args.out_dir, "model_a"))
    write_eval_batch(batch, arch, os.path.join(args.out_dir, "batch"))

    def perturb(ws):
        out = ws.copy()
        for name, arr in out.tensors.items():
            std = float(arr.std())
            if args.noise > 0 and std > 0:
                out.tensors[name] = arr + rng.normal(0.0, args.noise * std, arr.shape)
        return out

    opts = MatchOptions(max_sweeps=args.max_sweeps, seed=args.seed, p_norm=args.p_norm)

    # Compose-mode plant, match, and functional-equivalence certificate.
    graph = build_coupling_graph(arch, "compose")
    plant = graph.random_assignment(rng)
    model_b = perturb(apply_assignment(model_a, graph, plant))
    write_checkpoint(model_b, os.path.join(args.out_dir, "model_b"))
    write_permutation_assignment(plant, os.path.join(args.out_dir, "plant.perm"))
    result = weight_match(model_a, model_b, graph, opts)
    write_permutation_assignment(result.assignment, os.path.join(args.out_dir, "recovered.perm"))
    _atomic_write_text(os.path.join(args.out_dir, "trace.txt"), format_trace(result))
    recovery = recovery_fraction(result.assignment, plant, graph)
    equiv = verify_equivalence(model_a, graph, result.assignment, n_samples=32, tol=args.tol, seed=args.seed)
    report += [
        "",
        "[compose]",
        f"converged: {result.converged} after {result.n_sweeps} sweeps",
        "objective trace: " + " ".join(f"{t:.12g}" for t in result.trace),
        f"recovery_rate: {recovery:.12g}",
        f"recovery_ok: {'yes' if recovery >= 0.99 else 'no (matcher could not undo this much noise)'}",
        f"equivalence_max_dev: {equiv.max_dev:.12g} (tol {equiv.tol:g}) passed: {equiv.passed}",
    ]

    # Tie-mode plant for interpolation: permuted models keep identity skips,
    # so plain weight interpolation is meaningful.
    graph_tie = build_coupling_graph(arch, "tie", pin_embedding=False)
    plant_tie = graph_tie.random_assignment(rng)
    model_b_tie = perturb(apply_assignment(model_a, graph_tie, plant_tie))
    write_checkpoint(model_b_tie, os.path.join(args.out_dir, "model_b_tie"))
    write_permutation_assignment(plant_tie, os.path.join(args.out_dir, "plant_tie.perm"))
    result_tie = weight_match(model_a, model_b_tie, graph_tie, opts)
    write_permutation_assignment(
        result_tie.assignment, os.path.join(args.out_dir, "recovered_tie.perm")
    )
    recovery_tie = recovery_fraction(result_tie.assignment, plant_tie, graph_tie)
    matched_a = apply_assignment(model_a, graph_tie, result_tie.assignment)
    curve_matched = lmc_curve(matched_a, model_b_tie, batch, n_points=args.points)
    curve_naive = lmc_curve(model_a, model_b_tie, batch, n_points=args.points)
    for tag, curve in (("lmc_matched", curve_matched), ("lmc_naive", curve_naive)):
        rows = ["alpha,loss"] + [f"{a:.12g},{l:.12g}" for a, l in zip(curve.alphas, curve.losses)]
        _atomic_write_text(os.path.join(args.out_dir, f"{tag}.csv"), "\n".join(rows) + "\n")
    mid = args.points // 2
    report += [
        "",
        "[tie interpolation]",
        f"recovery_rate: {recovery_tie:.12g}",
        f"endpoint losses: {curve_matched.losses[0]:.12g} {curve_matched.losses[-1]:.12g}",
        f"midpoint loss matched: {curve_matched.losses[mid]:.12g}",
        f"midpoint loss naive: {curve_naive.losses[mid]:.12g}",
    ]

    _atomic_write_text(os.path.join(args.out_dir, "report.txt"), "\n".join(report) + "\n")
    print("\n".join(report))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--residual-mode", choices=("compose", "tie"), default="compose")
    parser.add_argument("--unpin-embedding", action="store_true",
                        help="let the matcher permute the embedding output as well")
    parser.add_argument("--dump-graph", action="store_true",
                        help="print the permutation application table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskport")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("match", help="match model A's units onto model B's")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-sweeps", type=int, default=50)
    p.add_argument("--p-norm", type=float, default=2.0)
    p.add_argument("--include-w0-intra", action=argparse.BooleanOptionalAction,
                   default=True, dest="include_w0_intra")
    p.add_argument("--trace", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("apply", help="apply a permutation assignment to a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--perm", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("task-vector", help="fine-tuned minus base, stored as a task vector")
    p.add_argument("--finetuned", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_task_vector)

    p = sub.add_parser("transport", help="add a permuted, scaled task vector to a base model")
    p.add_argument("--base", required=True)
    p.add_argument("--task-vector", required=True)
    p.add_argument("--perm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--alpha-file", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("verify", help="check a permuted model computes the same function")
    p.add_argument("--model", required=True)
    p.add_argument("--perm", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("lmc", help="loss along the straight line between two checkpoints")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lmc)

    p = sub.add_parser("demo", help="synthetic end-to-end plant/match/verify/interpolate run")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--mlp-hidden", type=int, default=64)
    p.add_argument("--input-dim", type=int, default=16)
    p.add_argument("--output-dim", type=int, default=4)
    p.add_argument("--layernorm", action="store_true")
    p.add_argument("--train-steps", type=int, default=150)
    p.add_argument("--train-lr", type=float, default=0.02)
    p.add_argument("--max-sweeps", type=int, default=50)
    p.add_argument("--p-norm", type=float, default=2.0)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArchMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ARCH
    except (TaskportError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
