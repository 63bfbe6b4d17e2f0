"""Command-line pipeline: build banks, score, evaluate, sweep, export.

Stages communicate only through OPBK and TSV files, so each one can be
driven and tested in isolation, and external patch extractors plug in at
the file boundary.

Exit codes: 0 success, 2 usage error, 3 data/format error. Every
successful run writes a JSON manifest (default ``<out>.manifest.json``)
recording the verbatim argv, inputs, seed, version, and wall-clock time.
The environment variable OPENPATCH_THREADS caps worker parallelism
(0 = auto).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .banks import UNKNOWN, collect_class_banks
from .coreset import CoresetConfig, build_unified_bank
from .matching import build_index, match_patches
from .metrics import (
    evaluate_pipeline,
    evaluate_scores,
    fewshot_protocol,
    reports_tsv_lines,
    write_report,
    write_reports_tsv,
)
from .opbk import OpbkError, read_bank, read_embedding_sets, write_bank, write_class_map, write_embedding_sets
from .scoring import (
    ALL_FUNCTIONS,
    LONG_NAMES,
    SHORT_NAMES,
    ScoringConfig,
    read_scores_tsv,
    score_sample,
    support_globals_matrix,
    write_scores_tsv,
)
from .synth import OOD_MODES, SynthConfig, class_names, generate
from ._parallel import parallel_map


class UsageError(Exception):
    """Bad flag combinations detected after parsing."""


class KeepRatio(NamedTuple):
    raw: str
    value: float


def _keep_ratio(text: str) -> KeepRatio:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ratio {text!r}")
    if not (0.0 < value <= 1.0):
        raise argparse.ArgumentTypeError(f"keep ratio must be in (0, 1], got {text}")
    return KeepRatio(text, value)


def _ratio_list(text: str) -> list[KeepRatio]:
    ratios = [_keep_ratio(part) for part in text.split(",") if part]
    if not ratios:
        raise argparse.ArgumentTypeError("empty ratio list")
    values = [r.value for r in ratios]
    if len(set(values)) != len(values):
        raise argparse.ArgumentTypeError(f"duplicate ratios in {text!r}")
    return ratios


def _function_list(text: str) -> list[str]:
    names = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part not in LONG_NAMES:
            raise argparse.ArgumentTypeError(
                f"unknown scoring function {part!r} (choose from {', '.join(SHORT_NAMES.values())})"
            )
        names.append(LONG_NAMES[part])
    if not names:
        raise argparse.ArgumentTypeError("no scoring functions given")
    # canonical order, duplicates collapsed
    return [f for f in ALL_FUNCTIONS if f in set(names)]


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K list {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("every K must be >= 1")
    return ks


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    version: str
    started_at: str
    duration_s: float
    details: dict

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scoring_config(functions: Sequence[str], support_path: str | None) -> ScoringConfig:
    globals_matrix = None
    if "nn_global" in functions:
        if support_path is None:
            raise UsageError("--support is required when the nn function is requested")
        globals_matrix = support_globals_matrix(read_embedding_sets(support_path))
    return ScoringConfig(functions=frozenset(functions), support_globals=globals_matrix)


def cmd_synth(args) -> dict:
    cfg = SynthConfig(
        class_count=args.classes,
        dim=args.dim,
        patches_per_sample=args.patches,
        samples_per_class=args.samples_per_class,
        class_center_spread=args.sigma_between,
        within_class_noise=args.sigma_within,
        ood_mode=args.ood_mode,
        seed=args.seed,
    )
    support, test = generate(cfg)
    write_embedding_sets(support, args.out_support)
    write_embedding_sets(test, args.out_test)
    map_path = Path(args.out_support).with_name("classes.map")
    write_class_map(class_names(cfg), map_path)
    print(f"wrote {len(support)} support and {len(test)} test samples")
    return {
        "inputs": [],
        "outputs": [args.out_support, args.out_test, str(map_path)],
        "seed": args.seed,
        "details": {"ood_mode": args.ood_mode},
    }


def cmd_build(args) -> dict:
    support = read_embedding_sets(args.support)
    for sample in support:
        if sample.label == UNKNOWN:
            raise ValueError(f"support sample {sample.sample_id} is UNKNOWN-labeled")
    cfg = CoresetConfig(
        keep_ratio=args.keep_ratio.value, seed=args.seed, projection_dim=args.projection_dim
    )
    metadata = {
        "backbone": args.backbone_tag,
        "extraction_layer": args.layer_tag,
        "keep_ratio": args.keep_ratio.raw,
        "seed": str(args.seed),
    }
    before = {y: b.patch_count for y, b in collect_class_banks(support).items()}
    bank = build_unified_bank(support, cfg, metadata)
    for class_id in sorted(bank.banks):
        print(f"class {class_id}: {before[class_id]} -> {bank.banks[class_id].patch_count}")
    write_bank(bank, args.out)
    print(f"wrote bank with {bank.total_patches} patches over {bank.class_count} classes")
    return {
        "inputs": [args.support],
        "outputs": [args.out],
        "seed": args.seed,
        "details": {"keep_ratio": args.keep_ratio.raw},
    }


def cmd_score(args) -> dict:
    bank = read_bank(args.bank)
    test = read_embedding_sets(args.test)
    cfg = _scoring_config(args.functions, args.support)
    index = build_index(bank)
    reports = parallel_map(lambda s: score_sample(index, s, cfg), test)
    write_scores_tsv(test, reports, args.functions, args.out)
    print(f"wrote {len(reports)} score rows to {args.out}")
    inputs = [args.bank, args.test] + ([args.support] if args.support else [])
    return {"inputs": inputs, "outputs": [args.out], "seed": None, "details": {}}


def _split_known_unknown(labels: Sequence[int], values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = np.array([label != UNKNOWN for label in labels], dtype=bool)
    if not mask.any() or mask.all():
        raise ValueError("scores must cover both known and UNKNOWN samples")
    return values[mask], values[~mask]


def cmd_eval(args) -> dict:
    if args.scores is not None:
        if args.bank or args.test:
            raise UsageError("--scores cannot be combined with --bank/--test")
        _, labels, columns = read_scores_tsv(args.scores)
        wanted = [SHORT_NAMES[f] for f in args.functions]
        missing = [name for name in wanted if name not in columns]
        if missing:
            raise ValueError(f"scores file lacks columns {missing}")
        reports = {}
        for f in args.functions:
            known, unknown = _split_known_unknown(labels, columns[SHORT_NAMES[f]])
            reports[f] = evaluate_scores(known, unknown)
        inputs = [args.scores]
    else:
        if not (args.bank and args.test):
            raise UsageError("provide either --scores or both --bank and --test")
        bank = read_bank(args.bank)
        test = read_embedding_sets(args.test)
        cfg = _scoring_config(args.functions, args.support)
        reports = evaluate_pipeline(build_index(bank), test, cfg)
        inputs = [args.bank, args.test] + ([args.support] if args.support else [])
    for line in reports_tsv_lines(reports):
        print(line)
    outputs = []
    if args.out:
        write_report(reports, args.out)
        outputs.append(args.out)
    if args.out_tsv:
        write_reports_tsv(reports, args.out_tsv)
        outputs.append(args.out_tsv)
    return {"inputs": inputs, "outputs": outputs, "seed": None, "details": {}}


def cmd_fewshot(args) -> dict:
    support = read_embedding_sets(args.support)
    test = read_embedding_sets(args.test)
    coreset_cfg = CoresetConfig(keep_ratio=args.keep_ratio.value, seed=args.coreset_seed)
    cfg_functions = frozenset(args.functions)
    scoring_cfg = ScoringConfig(functions=cfg_functions)
    lines = [
        "k\tfunction\tauroc_mean\tauroc_std\tfpr95_mean\tfpr95_std\tn_known\tn_unknown\trepeats"
    ]
    draws_log = {}
    for k in args.k:
        report = fewshot_protocol(
            support, test, k, args.repeats, args.seed, coreset_cfg, scoring_cfg
        )
        for name in args.functions:
            stats = report.stats[name]
            lines.append(
                f"{k}\t{name}\t{stats.auroc_mean:.17g}\t{stats.auroc_std:.17g}"
                f"\t{stats.fpr95_mean:.17g}\t{stats.fpr95_std:.17g}"
                f"\t{report.n_known}\t{report.n_unknown}\t{report.repeats}"
            )
        draws_log[str(k)] = [
            {str(cid): list(ids) for cid, ids in repeat.items()}
            for repeat in report.drawn_sample_ids
        ]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return {
        "inputs": [args.support, args.test],
        "outputs": [args.out],
        "seed": args.seed,
        "details": {"drawn_sample_ids": draws_log},
    }


def cmd_sweep(args) -> dict:
    support = read_embedding_sets(args.support)
    test = read_embedding_sets(args.test)
    cfg = _scoring_config(args.functions, args.support_globals_from)
    lines = ["keep_ratio\tfunction\tauroc\tfpr95\tbank_patches\tseconds"]
    for ratio in args.keep_ratios:
        coreset_cfg = CoresetConfig(keep_ratio=ratio.value, seed=args.seed)
        bank = build_unified_bank(support, coreset_cfg, {"keep_ratio": ratio.raw})
        index = build_index(bank)
        t0 = time.perf_counter()
        reports = evaluate_pipeline(index, test, cfg)
        elapsed = time.perf_counter() - t0
        for name in args.functions:
            rep = reports[name]
            lines.append(
                f"{ratio.raw}\t{name}\t{rep.auroc:.17g}\t{rep.fpr95:.17g}"
                f"\t{bank.total_patches}\t{elapsed:.6f}"
            )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return {
        "inputs": [args.support, args.test],
        "outputs": [args.out],
        "seed": args.seed,
        "details": {"keep_ratios": [r.raw for r in args.keep_ratios]},
    }


def cmd_export_colors(args) -> dict:
    bank = read_bank(args.bank)
    test = read_embedding_sets(args.test)
    by_id = {s.sample_id: s for s in test}
    if args.sample not in by_id:
        raise ValueError(f"sample {args.sample} not found in {args.test}")
    sample = by_id[args.sample]
    if sample.anchors is None:
        raise ValueError(f"sample {args.sample} has no anchor points")
    index = build_index(bank)
    matches = match_patches(index, sample)
    lines = ["# x y z class_id delta"]
    for record in matches:
        x, y, z = (float(v) for v in sample.anchors[record.patch_index])
        lines.append(
            f"{x:.9g} {y:.9g} {z:.9g} {record.assigned_class} {record.distance:.17g}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(matches)} colored anchors to {args.out}")
    return {
        "inputs": [args.bank, args.test],
        "outputs": [args.out],
        "seed": None,
        "details": {"sample": args.sample},
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openpatch",
        description="Training-free semantic novelty detection over patch embedding files.",
        epilog=(
            "Score TSV columns: sample_id, label, then one column per requested "
            "function in canonical order max, mean, h, hw, nn. "
            "OPENPATCH_THREADS caps parallel workers (0 = auto)."
        ),
    )
    parser.add_argument("--manifest", help="override the run-manifest path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic support/test OPBK files")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--patches", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--sigma-between", type=float, default=20.0)
    p.add_argument("--sigma-within", type=float, default=1.0)
    p.add_argument("--ood-mode", choices=OOD_MODES, default="mixture")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-support", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_synth, primary_out="out_support")

    p = sub.add_parser("build", help="build a coreset-reduced unified bank from support data")
    p.add_argument("--support", required=True)
    p.add_argument("--keep-ratio", type=_keep_ratio, default=_keep_ratio("0.2"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--projection-dim", type=int, default=None)
    p.add_argument("--backbone-tag", default="none")
    p.add_argument("--layer-tag", default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build, primary_out="out")

    p = sub.add_parser("score", help="score test samples against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--functions", type=_function_list, default=_function_list("h,hw,max,mean"))
    p.add_argument("--support", help="support OPBK with globals, required for the nn function")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score, primary_out="out")

    p = sub.add_parser("eval", help="AUROC/FPR95 from a scores file or a bank+test pair")
    p.add_argument("--scores")
    p.add_argument("--function", dest="functions", type=_function_list)
    p.add_argument("--functions", dest="functions", type=_function_list)
    p.add_argument("--bank")
    p.add_argument("--test")
    p.add_argument("--support", help="support OPBK with globals, required for the nn function")
    p.add_argument("--out")
    p.add_argument("--out-tsv")
    p.set_defaults(func=cmd_eval, primary_out="out", functions=_function_list("hw"))

    p = sub.add_parser("fewshot", help="K-shot resampled evaluation")
    p.add_argument("--support", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k", type=_k_list, required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--functions", type=_function_list, default=_function_list("h,hw"))
    p.add_argument("--keep-ratio", type=_keep_ratio, default=_keep_ratio("0.2"))
    p.add_argument("--coreset-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fewshot, primary_out="out")

    p = sub.add_parser("sweep", help="AUROC/FPR95 across coreset keep ratios")
    p.add_argument("--support", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--keep-ratios", type=_ratio_list, required=True)
    p.add_argument("--functions", type=_function_list, default=_function_list("h,hw,max,mean"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--support-globals-from",
        help="support OPBK with globals, required for the nn function",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep, primary_out="out")

    p = sub.add_parser(
        "export-colors", help="per-anchor class id and match distance for one sample"
    )
    p.add_argument("--bank", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_colors, primary_out="out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OpbkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    duration = time.perf_counter() - t0
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        inputs=result["inputs"],
        outputs=result["outputs"],
        seed=result["seed"],
        version=__version__,
        started_at=started,
        duration_s=duration,
        details=result["details"],
    )
    manifest_path = args.manifest
    if manifest_path is None:
        primary = getattr(args, args.primary_out, None)
        manifest_path = f"{primary}.manifest.json" if primary else "openpatch-run.manifest.json"
    manifest.write(Path(manifest_path))
    return 0


if __name__ == "__main__":
    sys.exit(main())
