from __future__ import annotations

import argparse

from commands._shared import print_rows
from errors import NumericError
from gradcheck import run_pipeline_gradcheck


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gradcheck", help="finite-difference check of every parameter")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eps", type=float, default=1e-5)
    parser.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    parser.add_argument("--iters", type=int, default=3)
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument(
        "--max-per-tensor", type=int, default=48, help="entries checked per tensor; 0 checks all"
    )
    parser.set_defaults(handler=cmd_gradcheck)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    report = run_pipeline_gradcheck(
        seed=args.seed,
        eps=args.eps,
        dtype=args.dtype,
        iters=args.iters,
        tolerance=args.tolerance,
        max_per_tensor=args.max_per_tensor or None,
    )
    print_rows(entry.to_row() for entry in report.entries)
    failed = [entry.name for entry in report.entries if not entry.passed]
    if failed:
        raise NumericError(
            f"gradient check failed for {len(failed)} tensor(s), max rel error "
            f"{report.max_rel_error:.3e}: {', '.join(failed)}"
        )
    print(f"[gradcheck] all {len(report.entries)} tensors pass (max rel error {report.max_rel_error:.3e})")
    return 0
