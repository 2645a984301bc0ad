"""Command-line interface.

Subcommands cover the full pipeline: delta extraction, encoding to a .dtsa
archive (fixed ratio or storage-budget mode), decoding back to a model,
base merging, storage stats, unseen-task weighting/fusion, and the
synthetic benchmark (JSON + aligned table + CSV + figures).

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .archive_io import choose_budget_ratio, read_archive, storage_report, write_archive
from .codec import encode_task, reconstruct_model
from .errors import DtsForgeError, InvalidConfig
from .lowrank import CodecConfig, CodecMode
from .merging import (
    STRATEGY_TASK_ARITHMETIC,
    STRATEGY_WEIGHT_AVERAGE,
    difference_vectors,
    task_arithmetic_merge,
    task_vector,
    weight_average,
)
from .tensor_store import (
    DIFFERENCE_VECTOR,
    TASK_VECTOR,
    DeltaMap,
    TensorMap,
    content_fingerprint,
    linear_combine,
    load_tensor_map,
    save_tensor_map,
)
from .unseen import load_embeddings, merge_for_unseen, similarity_weights

_MODES = {"four": CodecMode.FOUR_GROUP, "two": CodecMode.TWO_GROUP, "noscale": CodecMode.NO_SCALING}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit(2); usage errors are exit 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dts-forge", description=__doc__)
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("delta", help="subtract a base model from a fine-tuned one")
    p.add_argument("--finetuned", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["task", "diff"], default="task")

    p = sub.add_parser("encode", help="compress a delta into a .dtsa archive")
    p.add_argument("--delta", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--r", type=float, default=0.3)
    p.add_argument("--budget-amr", type=float, default=None,
                   help="pick r by bisection so storage stays under this fraction")
    p.add_argument("--mode", choices=sorted(_MODES), default="four")
    p.add_argument("--task", default=None, help="task name stored in the archive")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="reconstruct a model from base + archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("merge", help="merge full models (wa) or base+deltas (ta)")
    p.add_argument("--strategy", choices=[STRATEGY_WEIGHT_AVERAGE, STRATEGY_TASK_ARITHMETIC],
                   required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.4)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--base", default=None, help="pretrained model (required for ta)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="print the storage report of an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--base", required=True)

    p = sub.add_parser("unseen-weights", help="similarity weights from an embeddings file")
    p.add_argument("--embeddings", required=True)

    p = sub.add_parser("unseen-merge", help="fuse archives for an unseen task")
    p.add_argument("--base", required=True)
    p.add_argument("--archives", nargs="+", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="run the synthetic multi-task benchmark")
    p.add_argument("--config", default=None, help="BenchConfig JSON (defaults used if omitted)")
    p.add_argument("--out", required=True, help="report JSON path; .txt/.csv land alongside")
    p.add_argument("--figures-dir", default=None, help="figure directory (default: next to --out)")
    p.add_argument("--no-figures", action="store_true")

    return parser


def _emit(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _load_delta(path: str) -> DeltaMap:
    tensors = load_tensor_map(path)
    kind = tensors.metadata.get("delta_kind", TASK_VECTOR)
    if kind not in (TASK_VECTOR, DIFFERENCE_VECTOR):
        kind = TASK_VECTOR
    return DeltaMap(tensors, kind=kind)


def _cmd_delta(args) -> dict:
    finetuned = load_tensor_map(args.finetuned)
    base = load_tensor_map(args.base)
    delta = linear_combine([(1.0, finetuned), (-1.0, base)])
    out = TensorMap({name: arr for name, arr in delta}, {"delta_kind": args.kind})
    save_tensor_map(out, args.out)
    return {"written": args.out, "layers": len(out), "kind": args.kind}


def _cmd_encode(args) -> dict:
    delta = _load_delta(args.delta)
    base = load_tensor_map(args.base)
    if args.budget_amr is not None:
        r = choose_budget_ratio(base.shapes(), args.budget_amr)
    else:
        r = args.r
    config = CodecConfig(r=r, mode=_MODES[args.mode])
    task_name = args.task or Path(args.delta).stem
    archive = encode_task(task_name, delta, content_fingerprint(base), config)
    write_archive(archive, args.out)
    report = storage_report(archive, base)
    return {
        "written": args.out,
        "task": task_name,
        "r": r,
        "mode": args.mode,
        "archive_bytes": report.archive_bytes,
        "amr": report.amr_2bit,
    }


def _cmd_decode(args) -> dict:
    archive = read_archive(args.archive)
    base = load_tensor_map(args.base)
    model = reconstruct_model(base, archive)
    save_tensor_map(model, args.out)
    return {"written": args.out, "task": archive.task_name, "layers": len(model)}


def _cmd_merge(args) -> dict:
    models = [load_tensor_map(p) for p in args.models]
    if args.strategy == STRATEGY_WEIGHT_AVERAGE:
        merged = weight_average(models)
    else:
        if args.base is None:
            raise _UsageError("--strategy ta requires --base (the pretrained model)")
        base = load_tensor_map(args.base)
        deltas = [task_vector(m, base) for m in models]
        merged = task_arithmetic_merge(base, deltas, args.lam)
    save_tensor_map(merged, args.out)
    return {"written": args.out, "strategy": args.strategy, "models": len(models)}


def _cmd_stats(args) -> dict:
    archive = read_archive(args.archive)
    base = load_tensor_map(args.base)
    return storage_report(archive, base).to_json_dict()


def _cmd_unseen_weights(args) -> dict:
    target, seen = load_embeddings(args.embeddings)
    weights = similarity_weights(target, seen)
    return {"weights": weights.as_dict()}


def _cmd_unseen_merge(args) -> dict:
    base = load_tensor_map(args.base)
    archives = [read_archive(p) for p in args.archives]
    target, seen = load_embeddings(args.embeddings)
    by_name = {emb.task_name: emb for emb in seen}
    missing = [a.task_name for a in archives if a.task_name not in by_name]
    if missing:
        raise InvalidConfig(f"embeddings file lacks tasks {missing}")
    weights = similarity_weights(target, [by_name[a.task_name] for a in archives])
    merged = merge_for_unseen(base, archives, weights)
    save_tensor_map(merged, args.out)
    return {"written": args.out, "weights": weights.as_dict()}


def _cmd_bench(args) -> dict:
    config = bench_mod.BenchConfig.from_json(args.config) if args.config else bench_mod.BenchConfig()
    config.validate()
    report = bench_mod.run_suite(config)
    out = Path(args.out)
    bench_mod.write_report(report, out)
    out.with_suffix(".txt").write_text(report.to_text_table())
    out.with_suffix(".csv").write_text(report.to_csv())
    result = {"written": str(out), "table": str(out.with_suffix(".txt")), "csv": str(out.with_suffix(".csv"))}
    if not args.no_figures:
        from .figures import render_figures

        figdir = Path(args.figures_dir) if args.figures_dir else out.parent / "figures"
        result["figures"] = [str(p) for p in render_figures(report, figdir)]
    return result


_HANDLERS = {
    "delta": _cmd_delta,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "merge": _cmd_merge,
    "stats": _cmd_stats,
    "unseen-weights": _cmd_unseen_weights,
    "unseen-merge": _cmd_unseen_merge,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    want_json = "--json" in (argv if argv is not None else sys.argv[1:])
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _fail(want_json, "UsageError", str(exc), 1)
        return 1
    try:
        payload = _HANDLERS[args.command](args)
    except _UsageError as exc:
        _fail(args.json, "UsageError", str(exc), 1)
        return 1
    except DtsForgeError as exc:
        _fail(args.json, exc.code, str(exc), exc.exit_code)
        return exc.exit_code
    _emit(args, payload)
    return 0


def _fail(as_json: bool, code: str, message: str, exit_code: int) -> None:
    if as_json:
        print(json.dumps({"error": code, "message": message}, sort_keys=True))
    else:
        print(f"error [{code}]: {message}", file=sys.stderr)
        if exit_code == 1:
            print("run 'dts-forge <subcommand> --help' for usage", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
