"""Command-line entry point: ``signembed <subcommand> ...``.

Exit codes: 0 success, 1 validation error (bad input, bad flags), 2 IO error.
Every run prints its resolved configuration as one JSON line on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ValidationError

log = logging.getLogger("signembed")

THREADS_ENV = "SIGNEMBED_THREADS"

# report "command" value -> schema file in signembed/schemas
SCHEMA_FOR = {
    "synth": "synth", "preprocess": "preprocess", "vocab": "vocab", "train": "train", "embed": "embed",
    "retrieve": "retrieval", "eval-islr": "retrieval", "identify-language": "retrieval",
    "analyze iconicity": "analyze", "analyze analogy": "analyze",
}


def load_schema(name: str) -> dict:
    """Published JSON schema by file stem, e.g. ``retrieval`` or ``error``."""
    from importlib.resources import files

    return json.loads(files("signembed").joinpath("schemas", f"{name}.json").read_text(encoding="utf-8"))


class UsageError(ValidationError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


class _Step(argparse.Action):
    """Collect preprocessing flags in command-line order."""

    def __call__(self, parser, namespace, values, option_string=None):
        steps = list(getattr(namespace, "steps", None) or [])
        name = self.const
        if name == "select":
            name = f"select:{values}"
        if name == "standardize":
            namespace.stats = values
        steps.append(name)
        namespace.steps = steps


def _write_json(obj, path) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(report: dict, out) -> dict:
    if out:
        _write_json(report, out)
    print(json.dumps(report.get("metrics", {k: v for k, v in report.items() if k != "config"}), sort_keys=True, default=str))
    return report


# ------------------------------------------------------------ subcommands


def cmd_synth(args) -> dict:
    from .synth import SynthConfig, generate_dataset

    raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_dict(raw)
    manifest = generate_dataset(cfg, args.out)
    counts = {s: len(manifest.split(s)) for s in ("train", "valid", "test")}
    report = {"command": "synth", "config": cfg.to_dict(), "out": str(args.out), "n_records": len(manifest.records), "splits": counts}
    return _emit(report, Path(args.out) / "report.json")


def cmd_preprocess(args) -> dict:
    from .pose import Record, load_pose, read_manifest, save_pose, write_manifest
    from .preprocess import check_steps, compute_corpus_stats, load_stats, needs_stats, save_stats, apply_steps

    steps = check_steps(args.steps or [])
    stats = load_stats(args.stats) if getattr(args, "stats", None) else None
    if needs_stats(steps) and stats is None:
        raise ValidationError("--anonymize needs statistics; pass --standardize <stats-file> first")
    if bool(args.input) == bool(args.manifest):
        raise UsageError("give exactly one of --input or --manifest")
    report = {"command": "preprocess", "steps": steps}
    if args.input:
        if not args.output:
            raise UsageError("--input needs --output")
        seq = apply_steps(load_pose(args.input), steps, stats)
        save_pose(seq, args.output)
        report.update(input=str(args.input), output=str(args.output), frames=seq.n_frames, keypoints=seq.n_keypoints)
        if args.write_stats:
            raise UsageError("--write-stats needs --manifest")
        return _emit(report, args.out)
    if not args.out_dir:
        raise UsageError("--manifest needs --out-dir")
    manifest = read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    (out_dir / "poses").mkdir(parents=True, exist_ok=True)
    records, train_seqs = [], []
    for r in sorted(manifest.records, key=lambda r: r.id):
        seq = apply_steps(manifest.load(r), steps, stats)
        rel = f"poses/{r.id}.pose"
        save_pose(seq, out_dir / rel)
        records.append(Record(r.id, rel, r.text, r.spoken_lang, r.signed_lang, r.split, r.label))
        if r.split == "train":
            train_seqs.append(seq)
    new = manifest.with_records(records)
    write_manifest(new, out_dir / "manifest.jsonl")
    report.update(manifest=str(args.manifest), out_dir=str(out_dir), n_records=len(records))
    if args.write_stats:
        st = compute_corpus_stats(train_seqs)
        save_stats(st, args.write_stats)
        report["stats"] = str(args.write_stats)
    return _emit(report, args.out or out_dir / "report.json")


def cmd_vocab(args) -> dict:
    from .pose import read_manifest
    from .text import build_vocab

    manifest = read_manifest(args.manifest)
    vocab = build_vocab(manifest.records, args.min_count)
    vocab.save(args.out)
    report = {"command": "vocab", "size": len(vocab), "min_count": args.min_count, "sha256": vocab.digest(), "out": str(args.out)}
    return _emit(report, args.report)


def cmd_train(args) -> dict:
    from .checkpoint import save_checkpoint
    from .pose import read_manifest
    from .text import Vocabulary
    from .train import load_train_config, train

    model, tc, pipeline = load_train_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        tc = replace(tc, seed=args.seed)
    manifest = read_manifest(args.manifest)
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("resolved training config: %s", json.dumps({"model": model, "train": tc.to_dict(), "preprocess": pipeline.to_dict()}))
    ckpt, history = train(manifest, pipeline, model, tc, vocab=vocab, metrics_path=out / "metrics.jsonl", max_steps=args.max_steps)
    save_checkpoint(ckpt, out / "checkpoint.sckp")
    ckpt.vocab.save(out / "vocab.json")
    report = {
        "command": "train",
        "checkpoint": str(out / "checkpoint.sckp"),
        "best_epoch": ckpt.epoch,
        "valid_loss": ckpt.valid_loss,
        "epochs_run": len(history),
        "final_train_loss": history[-1]["train_loss"] if history else None,
        "param_count": int(sum(p.size for p in ckpt.params.values())),
    }
    return _emit(report, out / "report.json")


def _load(args):
    from .checkpoint import load_checkpoint
    from .pose import read_manifest

    return load_checkpoint(args.checkpoint), read_manifest(args.manifest)


def cmd_embed(args) -> dict:
    from .analysis import export_embeddings

    ckpt, manifest = _load(args)
    skipped = export_embeddings(ckpt, manifest, args.out, args.split)
    n = len(manifest.records if args.split is None else manifest.split(args.split))
    report = {"command": "embed", "out": str(args.out), "n_rows": n - len(skipped), "dim": ckpt.config.embed_dim, "skipped": skipped}
    return _emit(report, args.report)


def cmd_retrieve(args) -> dict:
    from .retrieval import evaluate_retrieval, write_rank_csv

    ckpt, manifest = _load(args)
    report = evaluate_retrieval(ckpt, manifest, args.split, args.direction, args.k)
    if args.ranks_csv:
        write_rank_csv(report, args.ranks_csv)
    report["command"] = "retrieve"
    return _emit(report, args.out)


def cmd_eval_islr(args) -> dict:
    from .downstream import evaluate_islr

    ckpt, manifest = _load(args)
    report = evaluate_islr(
        ckpt, manifest, args.mode, shots=args.shots, k=args.k, seed=args.seed or 0, ks=args.ks,
        spoken=args.spoken, signed=args.signed, l2_penalty=args.l2,
    )
    report["command"] = "eval-islr"
    return _emit(report, args.out)


def cmd_identify_language(args) -> dict:
    from .analysis import embed_manifest
    from .downstream import identify_language
    from .retrieval import aggregate, first_relevant_rank, rank_all

    ckpt, manifest = _load(args)
    tags = [t.strip() for t in args.tags.split(",") if t.strip()]
    records, Z, skipped = embed_manifest(ckpt, manifest, args.split)
    if not records:
        raise ValidationError(f"no usable examples in split {args.split!r}")
    S = np.stack([_tag_scores(identify_language(ckpt, z, tags, args.spoken), tags) for z in Z])
    relevant = [{tags.index(r.signed_lang)} if r.signed_lang in tags else set() for r in records]
    ranked = rank_all(S, relevant, [r.id for r in records])
    ks = tuple(k for k in args.ks if k <= len(tags)) or (1,)
    metrics = aggregate(ranked, ks, "v2t")
    usable = [r for r in ranked if r.relevant]
    metrics["accuracy"] = float(np.mean([first_relevant_rank(r) == 1 for r in usable])) if usable else None
    report = {
        "command": "identify-language",
        "direction": "v2t",
        "split": args.split,
        "ks": list(ks),
        "tags": tags,
        "metrics": metrics,
        "n_queries": len(ranked),
        "pool_size": len(tags),
        "median_rank_of_pool": f"{metrics['MedianR']}/{len(tags)}",
        "skipped": skipped,
        "first_ranks": [],
    }
    return _emit(report, args.out)


def _tag_scores(ranked, tags):
    scores = dict(ranked)
    return np.array([scores[t] for t in tags])


def cmd_analyze(args) -> dict:
    from .analysis import analogy, centroid, embed_manifest, group_embeddings, iconicity_rank

    ckpt, manifest = _load(args)
    records, Z, skipped = embed_manifest(ckpt, manifest, args.split)
    groups = group_embeddings(records, Z, args.group_by, args.tag_by)
    if args.analysis == "iconicity":
        ranking = iconicity_rank(groups)
        report = {"command": "analyze iconicity", "group_by": args.group_by, "tag_by": args.tag_by,
                  "ranking": [{"key": k, "score": s} for k, s in ranking], "skipped": skipped}
    else:
        cents = {g.key: centroid(g) for g in groups}
        ranking = analogy(args.a, args.b, args.c, cents)
        report = {"command": "analyze analogy", "a": args.a, "b": args.b, "c": args.c, "group_by": args.group_by,
                  "ranking": [{"key": k, "score": s} for k, s in ranking[: args.top]], "skipped": skipped}
    return _emit(report, args.out)


# ----------------------------------------------------------------- parser


def build_parser() -> Parser:
    p = Parser(prog="signembed", description="Contrastive pose/text embeddings for sign language.")
    p.add_argument("--seed", type=int, default=None, help="root seed overriding config seeds")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics for bit-stable output")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic pose dataset")
    s.add_argument("--config", help="JSON file with SynthConfig fields")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="apply preprocessing steps in flag order")
    s.add_argument("--input", help="single pose file")
    s.add_argument("--output", help="output pose file (with --input)")
    s.add_argument("--manifest", help="process every record of a manifest")
    s.add_argument("--out-dir", help="output directory (with --manifest)")
    s.add_argument("--normalize", action=_Step, nargs=0, const="normalize", help="shoulder-width normalization")
    s.add_argument("--reduce", action=_Step, nargs=0, const="reduce", help="reposition hands, drop duplicate body hand points")
    s.add_argument("--standardize", action=_Step, const="standardize", metavar="STATS", help="standardize with a stats file")
    s.add_argument("--anonymize", action=_Step, nargs=0, const="anonymize", help="replace the first frame by the corpus mean")
    s.add_argument("--flip-right", action=_Step, nargs=0, const="flip_right", help="mirror left-handed sequences")
    s.add_argument("--select", action=_Step, const="select", metavar="EXPR", help="keep keypoints, e.g. all-face+face_contour")
    s.add_argument("--write-stats", help="write train-split stats of the output to this file")
    s.add_argument("--out", help="JSON report path")
    s.set_defaults(func=cmd_preprocess, steps=[], stats=None)

    s = sub.add_parser("vocab", help="vocabulary tools")
    vs = s.add_subparsers(dest="action", metavar="action")
    vs.required = True
    b = vs.add_parser("build", help="build a vocabulary from a manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--min-count", type=int, default=1)
    b.add_argument("--out", required=True, help="vocabulary JSON path")
    b.add_argument("--report", help="JSON report path")
    b.set_defaults(func=cmd_vocab)

    s = sub.add_parser("train", help="contrastive training")
    s.add_argument("--config", required=True, help="JSON with model/train/augment/preprocess sections")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--vocab", help="existing vocabulary JSON")
    s.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    s.set_defaults(func=cmd_train)

    def model_args(s, split_default="test"):
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--manifest", required=True)
        s.add_argument("--split", default=split_default)

    s = sub.add_parser("embed", help="export embeddings as CSV")
    model_args(s, None)
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--report", help="JSON report path")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("retrieve", help="text-video retrieval evaluation")
    model_args(s)
    s.add_argument("--direction", choices=["v2t", "t2v"], default="v2t")
    s.add_argument("--k", type=_ks, default=(1, 5, 10), help="comma-separated cutoffs")
    s.add_argument("--ranks-csv", help="per-query first-correct ranks")
    s.add_argument("--out", help="JSON report path")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("eval-islr", help="isolated sign recognition on frozen embeddings")
    model_args(s)
    s.add_argument("--mode", choices=["zero", "knn", "probe"], default="zero")
    s.add_argument("--shots", type=int, default=10)
    s.add_argument("--k", type=int, default=5, help="KNN neighbours")
    s.add_argument("--ks", type=_ks, default=(1, 5, 10), help="report cutoffs")
    s.add_argument("--l2", type=float, default=1e-2, help="probe L2 penalty")
    s.add_argument("--spoken", default="en")
    s.add_argument("--signed", default=None, help="sign-language tag for zero-shot prompts")
    s.add_argument("--out", help="JSON report path")
    s.set_defaults(func=cmd_eval_islr)

    s = sub.add_parser("identify-language", help="rank content-free language prompts")
    model_args(s)
    s.add_argument("--tags", required=True, help="comma-separated sign-language tags")
    s.add_argument("--spoken", default="en")
    s.add_argument("--ks", type=_ks, default=(1,))
    s.add_argument("--out", help="JSON report path")
    s.set_defaults(func=cmd_identify_language)

    s = sub.add_parser("analyze", help="embedding-space analysis")
    asub = s.add_subparsers(dest="analysis", metavar="analysis")
    asub.required = True
    for name in ("iconicity", "analogy"):
        a = asub.add_parser(name)
        model_args(a, None)
        a.add_argument("--group-by", default="concept")
        a.add_argument("--tag-by", default="signed_lang")
        a.add_argument("--out", help="JSON report path")
        if name == "analogy":
            a.add_argument("--a", required=True)
            a.add_argument("--b", required=True)
            a.add_argument("--c", required=True)
            a.add_argument("--top", type=int, default=10)
        a.set_defaults(func=cmd_analyze)
    return p


def _resolved(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items()) if k != "func"}


def _threads(deterministic: bool) -> int | None:
    if deterministic:
        return 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}")
        if n < 1:
            raise ValidationError(f"{THREADS_ENV} must be positive")
        return n
    return None


def _fail(code: int, exc: BaseException, json_errors: bool) -> int:
    kind = "validation" if code == 1 else "io"
    if json_errors:
        print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        return _fail(1, e, json_errors)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    print(json.dumps({"resolved_config": _resolved(args)}, sort_keys=True, default=str))
    from .train import TrainingError

    try:
        with threadpool_limits(limits=_threads(args.deterministic)):
            args.func(args)
    except (ValidationError, TrainingError, ValueError) as e:
        return _fail(1, e, args.json_errors)
    except OSError as e:
        return _fail(2, e, args.json_errors)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
