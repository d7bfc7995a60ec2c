"""Command-line entry point: ``vgnsl <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (AnalysisError, correlate_concreteness, export_embeddings,
                       rank_concreteness, replacement_experiment)
from .core_types import Corpus, FormatError, format_span_tree, read_captions, read_span_trees, read_treebank
from .embeddings import CheckpointError, load_model, save_model
from .metrics import category_recall, corpus_f1, self_f1
from .parser import parse_corpus
from .synthetic import CAPTIONS_FILE, gen_synthetic_corpus, read_bundle, read_norms, write_bundle
from .training import TrainConfig, select_checkpoints, seed_list, train_seed

log = logging.getLogger("vgnsl")

DEFAULT_CATEGORIES = "NP,VP,PP,ADJP"


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# Manifests and locks


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_digests(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for q in sorted(p.iterdir()):
                if q.is_file() and not q.name.startswith("."):
                    out[str(q)] = digest(q)
        elif p.exists():
            out[str(p)] = digest(p)
    return out


def write_manifest(args, config: dict, inputs, seeds=(), target=None) -> dict:
    manifest = {
        "subcommand": args.command if not getattr(args, "probe", None) else f"analyze {args.probe}",
        "config": config,
        "seeds": list(seeds),
        "inputs": _input_digests(inputs),
        "version": __version__,
    }
    path = getattr(args, "manifest", None) or target
    text = json.dumps(manifest, indent=2, sort_keys=True)
    if path is None:
        print(text, file=sys.stderr)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return manifest


@contextlib.contextmanager
def output_lock(path, directory: bool = False):
    """Exclusive lock file guarding an output directory or file."""
    if path is None:
        yield
        return
    path = Path(path)
    if directory:
        path.mkdir(parents=True, exist_ok=True)
    lock = path / ".vgnsl.lock" if directory else Path(str(path) + ".lock")
    lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CLIError(f"output {path} is in use by another run (lock file {lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Loading helpers


def _is_checkpoint(path) -> bool:
    return str(path).endswith(".json")


def _load_models(paths):
    return [load_model(p) for p in paths]


def _parse_with(model, corpus, path):
    res = parse_corpus(model, corpus)
    if res.errors:
        raise CLIError(f"{path}: failed to parse captions " +
                       ", ".join(f"{k} ({msg})" for k, msg in res.errors[:5]))
    return res.trees


def _tree_sets(paths, captions_path):
    """Parses from checkpoints (parsed over ``captions_path``) or tree files."""
    corpus = None
    sets = []
    for p in paths:
        if _is_checkpoint(p):
            if captions_path is None:
                raise CLIError("--captions is required when passing model checkpoints")
            corpus = corpus or read_captions(captions_path)
            sets.append(_parse_with(load_model(p), corpus, p))
        else:
            sets.append(read_span_trees(p))
    return sets


def _pos_and_vocab(models, captions_path):
    if captions_path is None:
        return models[0].vocab, {}
    corpus = read_captions(captions_path)
    return corpus.vocabulary(), corpus.majority_pos()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args):
    with output_lock(args.out_dir, directory=True):
        bundle = gen_synthetic_corpus(args.seed, args.size)
        paths = write_bundle(bundle, args.out_dir)
        write_manifest(args, {"seed": args.seed, "size": args.size}, [], [args.seed],
                       Path(args.out_dir) / "manifest.json")
    log.info("wrote %d captions to %s", args.size, args.out_dir)
    return 0


TRAIN_FLAGS = ("variant", "d_full", "epochs", "batch_size", "learning_rate", "temperature",
               "baseline_decay", "seeds", "base_seed", "reward", "margin", "matcher_dim", "matcher_lr")


def resolve_train_config(args) -> TrainConfig:
    """Defaults < config file < command-line flags.  All problems are
    reported together."""
    values = TrainConfig().to_json()
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            from_file = json.load(f)
        unknown = sorted(set(from_file) - set(values))
        if unknown:
            raise CLIError(f"{args.config}: unknown keys {unknown}")
        values.update(from_file)
    for name in TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    config = TrainConfig(**values)
    problems = config.problems()
    if problems:
        raise CLIError("invalid training config:\n  " + "\n  ".join(problems))
    return config


def cmd_train(args):
    config = resolve_train_config(args)
    bundle = read_bundle(args.corpus)
    if config.reward == "oracle" and not bundle.concreteness:
        raise CLIError(f"{args.corpus}: oracle reward needs a concreteness table")
    if config.reward == "vse" and bundle.scenes is None:
        raise CLIError(f"{args.corpus}: matching reward needs scene features")
    out = Path(args.out_dir)
    with output_lock(out, directory=True):
        streams = []
        for seed in seed_list(config):
            sdir = out / f"seed_{seed}"
            sdir.mkdir(exist_ok=True)
            with open(sdir / "log.jsonl", "w", encoding="utf-8") as logf:
                def on_step(rec, logf=logf):
                    logf.write(json.dumps(rec, sort_keys=True) + "\n")
                stream = train_seed(bundle.corpus, config, seed, bundle.scenes,
                                    bundle.concreteness, on_step)
            for epoch, model in enumerate(stream):
                save_model(model, sdir / f"epoch_{epoch:03d}.json")
            streams.append(stream)
        inputs = [args.corpus] + ([args.config] if args.config else [])
        if args.validation:
            if len(streams) < 2:
                raise CLIError("--validation needs at least two seeds")
            val = Path(args.validation)
            val = val / CAPTIONS_FILE if val.is_dir() else val
            sel = select_checkpoints(streams, read_captions(val))
            seldir = out / "selected"
            seldir.mkdir(exist_ok=True)
            for seed, idx, model in zip(seed_list(config), sel.indices, sel.models):
                save_model(model, seldir / f"seed_{seed}.json")
            (out / "selection.json").write_text(_json_text(
                {"epochs": dict(zip(map(str, seed_list(config)), sel.indices)),
                 "agreement": sel.agreement}), encoding="utf-8")
            inputs.append(args.validation)
        write_manifest(args, config.to_json(), inputs, seed_list(config), out / "manifest.json")
    return 0


def cmd_parse(args):
    model = load_model(args.model)
    corpus = read_captions(args.captions)
    res = parse_corpus(model, corpus, args.mode, args.temperature, args.seed, args.workers)
    for k, msg in res.errors:
        print(f"error: caption {k}: {msg}", file=sys.stderr)
    lines = []
    for cap, tree in zip(corpus.captions, res.trees):
        if tree is None:
            lines.append("")
        else:
            lines.append(format_span_tree(tree, cap.words if args.format == "surface" else None))
    with output_lock(args.out):
        _emit("\n".join(lines) + "\n", args.out)
        write_manifest(args, {"mode": args.mode, "temperature": args.temperature, "seed": args.seed,
                              "format": args.format}, [args.model, args.captions], [args.seed],
                       None if args.out is None else str(args.out) + ".manifest.json")
    return 1 if res.errors else 0


def _eval_one(trees, gold, args, categories):
    if len(trees) != len(gold):
        raise CLIError(f"{len(trees)} predictions for {len(gold)} gold trees")
    bad = [k for k, (t, g) in enumerate(zip(trees, gold)) if t.n != g.n]
    if bad:
        raise CLIError("length mismatch at indices " + ", ".join(map(str, bad[:20])))
    res = corpus_f1(trees, gold, args.include_trivial, args.macro)
    rec = category_recall(trees, gold, categories, args.include_trivial)
    return {**res.to_json(), "category_recall": rec.to_json()}


def cmd_eval(args):
    gold = read_treebank(args.gold)
    categories = tuple(c for c in args.categories.split(",") if c)
    sources = args.pred or args.model
    if not sources:
        raise CLIError("give --pred tree files or --model checkpoints")
    if args.model and not args.captions:
        raise CLIError("--model needs --captions")
    sets = _tree_sets(sources, args.captions)
    per = [dict(source=str(src), **_eval_one(trees, gold, args, categories))
           for src, trees in zip(sources, sets)]
    f1s = np.array([p["f1"] for p in per])
    summary = {"f1_mean": float(f1s.mean()), "f1_std": float(f1s.std()), "n_models": len(per)}
    for lab in categories:
        vals = [p["category_recall"][lab]["recall"] for p in per if lab in p["category_recall"]]
        if vals:
            summary[f"recall_{lab}_mean"] = float(np.mean(vals))
            summary[f"recall_{lab}_std"] = float(np.std(vals))
    report = {"models": per, "summary": summary, "include_trivial": args.include_trivial,
              "averaging": "macro" if args.macro else "micro"}
    with output_lock(args.out):
        _emit(_json_text(report), args.out)
        write_manifest(args, {"include_trivial": args.include_trivial, "macro": args.macro,
                              "categories": list(categories)},
                       list(sources) + [args.gold] + ([args.captions] if args.captions else []), [],
                       None if args.out is None else str(args.out) + ".manifest.json")
    return 0


def cmd_agree(args):
    set_a = _tree_sets(args.set_a, args.captions)
    set_b = _tree_sets(args.set_b, args.captions) if args.set_b else None
    res = self_f1(set_a, set_b, args.include_trivial, args.macro)
    report = {**res.to_json(), "set_a": args.set_a, "set_b": args.set_b}
    with output_lock(args.out):
        _emit(_json_text(report), args.out)
        write_manifest(args, {"include_trivial": args.include_trivial, "macro": args.macro},
                       list(args.set_a) + list(args.set_b or []) + ([args.captions] if args.captions else []),
                       [], None if args.out is None else str(args.out) + ".manifest.json")
    return 0


def cmd_analyze(args):
    models = _load_models(args.models)
    norms = read_norms(args.norms) if args.norms else None
    vocab, pos = _pos_and_vocab(models, args.captions)
    inputs = list(args.models) + [p for p in (args.norms, args.captions, getattr(args, "gold", None)) if p]
    if args.probe == "concreteness":
        if norms is None:
            raise CLIError("concreteness probe needs --norms")
        ranking = rank_concreteness(models, vocab, norms, pos)
        corr = correlate_concreteness(ranking, norms)
        per_model = []
        for k in range(len(models)):
            vals = dict(zip(ranking.tokens, ranking.oriented[k].tolist()))
            c = correlate_concreteness(vals, norms)
            per_model.append({"r": c.r, "overlap": c.overlap, "orientation": ranking.orientation[k]})
        report = {"mean_rank_r": corr.r, "overlap": corr.overlap, "models": per_model,
                  "r_mean": float(np.mean([m["r"] for m in per_model])),
                  "ranking": sorted(ranking.as_dict().items(), key=lambda kv: kv[1])}
        text = _json_text(report)
    elif args.probe == "replace-nouns":
        if not args.captions or not args.gold:
            raise CLIError("replace-nouns needs --captions (with POS sidecar) and --gold")
        corpus = read_captions(args.captions)
        corpus = Corpus(corpus.captions, read_treebank(args.gold))
        ranking = rank_concreteness(models, vocab, norms, pos)
        rep = replacement_experiment(models, corpus, ranking, args.include_trivial)
        text = _json_text(rep.to_json())
    else:
        if args.out is None:
            raise CLIError("export-embeddings needs --out")
        ids = [Path(p).stem for p in args.models]
        with output_lock(args.out):
            n = export_embeddings(args.out, models, vocab, pos, norms, ids)
            write_manifest(args, {"rows": n}, inputs, [m.seed for m in models],
                           str(args.out) + ".manifest.json")
        return 0
    with output_lock(args.out):
        _emit(text, args.out)
        write_manifest(args, {"include_trivial": getattr(args, "include_trivial", False)}, inputs,
                       [m.seed for m in models],
                       None if args.out is None else str(args.out) + ".manifest.json")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _common(p, out=True):
    if out:
        p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--manifest", help="where to write the run manifest")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vgnsl", description=__doc__)
    ap.add_argument("--version", action="version", version=f"vgnsl {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic caption corpus bundle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--out-dir", required=True)
    _common(p, out=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--corpus", required=True, help="bundle directory or caption file")
    p.add_argument("--config", help="JSON training config (flags override it)")
    p.add_argument("--variant", help="model variant as d,score,combine (e.g. 1,ws,me)")
    p.add_argument("--d-full", dest="d_full", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--baseline-decay", dest="baseline_decay", type=float)
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--reward", choices=["oracle", "vse"])
    p.add_argument("--margin", type=float)
    p.add_argument("--matcher-dim", dest="matcher_dim", type=int)
    p.add_argument("--matcher-lr", dest="matcher_lr", type=float)
    p.add_argument("--validation", help="caption file or bundle directory for self-F1 checkpoint selection")
    p.add_argument("--out-dir", required=True)
    _common(p, out=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse captions with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--mode", choices=["greedy", "stochastic"], default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["surface", "index"], default="surface")
    p.add_argument("--workers", type=int, default=1)
    _common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="F1 and category recall against gold trees")
    p.add_argument("--pred", nargs="+", help="tree files, one per model")
    p.add_argument("--model", nargs="+", help="checkpoints, parsed over --captions")
    p.add_argument("--captions")
    p.add_argument("--gold", required=True)
    p.add_argument("--include-trivial", action="store_true",
                   help="count single-token and whole-sentence spans")
    p.add_argument("--macro", action="store_true", help="average per-sentence scores")
    p.add_argument("--categories", default=DEFAULT_CATEGORIES)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agree", help="self-F1 agreement between model sets")
    p.add_argument("--set-a", nargs="+", required=True, help="tree files or checkpoints")
    p.add_argument("--set-b", nargs="+", help="second set; omit for within-set agreement")
    p.add_argument("--captions", help="needed when sets contain checkpoints")
    p.add_argument("--include-trivial", action="store_true")
    p.add_argument("--macro", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("analyze", help="concreteness and noun-replacement probes")
    probes = p.add_subparsers(dest="probe", required=True)
    for name, hlp in (("concreteness", "correlate d=1 values with concreteness norms"),
                      ("replace-nouns", "F1 before/after replacing nouns with the most concrete one"),
                      ("export-embeddings", "CSV of low-dimensional token embeddings")):
        q = probes.add_parser(name, help=hlp)
        q.add_argument("--models", nargs="+", required=True)
        q.add_argument("--captions", help="caption file; its POS sidecar supplies tags")
        q.add_argument("--norms", help="token<TAB>score concreteness file")
        if name == "replace-nouns":
            q.add_argument("--gold")
            q.add_argument("--include-trivial", action="store_true")
        _common(q)
        q.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CLIError, CheckpointError, FormatError, AnalysisError, ValueError,
            FileNotFoundError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
