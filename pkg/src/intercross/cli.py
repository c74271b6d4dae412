"""Command line entry point: ``intercross <command> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Settings come from an optional YAML ``--config`` file; explicit flags win
over file values, which win over built-in defaults.  Every command that
writes artifacts also writes ``run.json`` next to them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._validation import check_tokens, parse_tokens
from .exceptions import IntercrossError

log = logging.getLogger("intercross")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _setup_logging():
    level = os.environ.get("INTERCROSS_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} does not exist")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a mapping at top level")
    return data


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_run_record(out_dir, command: str, args: argparse.Namespace, config: dict, seed) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "version": version_string(),
    }
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    log.info("run %s config %s seed %s", command, record["config_hash"], seed)
    return path


def _ref_flags(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--ref-<class> <utt_id>`` pairs into a mapping."""
    refs = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--ref-"):
            raise UsageError(f"unrecognized argument {tok!r}")
        name, _, value = tok[len("--ref-"):].partition("=")
        if not value:
            value = next(it, None)
            if value is None:
                raise UsageError(f"{tok} needs an utterance id")
        refs[name] = value
    return refs


def _load_model(ckpt):
    from .checkpoint import load_checkpoint

    model, index = load_checkpoint(ckpt)
    return model, index


def _ref_frames(corpus, class_names, refs: dict[str, str], required=True):
    unknown = set(refs) - set(class_names)
    if unknown:
        raise UsageError(f"--ref-{sorted(unknown)[0]}: model has no style class of that name; "
                         f"classes are {list(class_names)}")
    missing = [c for c in class_names if c not in refs]
    if required and missing:
        raise UsageError("missing reference flags: " + " ".join(f"--ref-{c} <utt_id>" for c in missing))
    return {c: corpus.frames[corpus.index_of(u)] for c, u in refs.items()}


def _write_frames(path, frames: np.ndarray, meta: dict):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(np.ascontiguousarray(frames, dtype="<f4").tobytes())
    Path(str(p) + ".json").write_text(json.dumps(meta, indent=2, default=float) + "\n")


def _text_arg(text: str, vocab_size: int) -> list[int]:
    return check_tokens(parse_tokens(text), vocab_size)


def _statistics(frames, n_tokens) -> dict:
    from .corpus import factor_statistics

    st = factor_statistics(frames, n_tokens)
    return {"spectral": st.spectral.tolist(), "frames_per_token": st.frames_per_token, "gain": st.gain}


# ---------------------------------------------------------------------------
# commands


def cmd_corpus_generate(args, extra):
    from .corpus import CorpusConfig, generate_corpus

    cfg = _read_config(args.config)
    cfg = cfg.get("corpus", cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "classes" not in cfg:
        raise UsageError("corpus config needs a 'classes' list (pass --config)")
    config = CorpusConfig.from_dict(cfg)
    manifest = generate_corpus(config, args.out)
    write_run_record(args.out, "corpus generate", args, config.to_dict(), config.seed)
    print(f"wrote {len(manifest.records)} utterances to {args.out}")
    return 0


def cmd_corpus_validate(args, extra):
    from .corpus import load_corpus, read_manifest, validate_manifest

    path = args.path or args.corpus
    if path is None:
        raise UsageError("corpus validate needs a corpus directory")
    problems = validate_manifest(read_manifest(path))
    for p in problems:
        print(p)
    if problems:
        return 1
    corpus = load_corpus(path)
    print(f"ok: {len(corpus)} utterances, classes {corpus.class_names}")
    return 0


def _train_settings(args) -> tuple[dict, dict]:
    cfg = _read_config(args.config)
    train = dict(cfg.get("train", {k: v for k, v in cfg.items() if k != "model"}))
    model = dict(cfg.get("model", {}))
    for key in ("seed", "mode", "steps", "batch_size", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            train[key] = value
    return train, model


def cmd_train(args, extra):
    from .corpus import load_corpus
    from .training import TrainConfig, model_config_for, train_loop

    train_cfg, model_cfg = _train_settings(args)
    config = TrainConfig.from_dict(train_cfg)
    corpus = load_corpus(args.corpus)
    mc = model_config_for(corpus, **model_cfg)
    resolved = {"train": config.to_dict(), "model": mc.to_dict(), "corpus": str(args.corpus)}
    write_run_record(args.out, "train", args, resolved, config.seed)
    result = train_loop(corpus, config, model_config=mc, out_dir=args.out)
    print(f"final loss {result.final_loss:.6f}; checkpoint at {Path(args.out) / 'checkpoint'}")
    return 0


def cmd_finetune(args, extra):
    from .corpus import load_corpus
    from .training import TrainConfig, fine_tune

    train_cfg, _ = _train_settings(args)
    config = TrainConfig.from_dict(train_cfg)
    model, index = _load_model(args.ckpt)
    corpus = load_corpus(args.corpus)
    write_run_record(args.out, "finetune", args, {"train": config.to_dict(), "ckpt": str(args.ckpt)}, config.seed)
    result = fine_tune(model, index["class_names"], index["instance_ids"], corpus, config,
                       out_dir=args.out, start_step=index.get("step", 0))
    print(f"final loss {result.final_loss:.6f}; checkpoint at {Path(args.out) / 'checkpoint'}")
    return 0


def cmd_eval(args, extra):
    from .corpus import load_corpus
    from .evaluation import evaluate, write_report

    model, _ = _load_model(args.ckpt)
    corpus = load_corpus(args.corpus)
    seed = args.seed or 0
    report = evaluate(model, corpus, seed=seed)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, report_path)
    write_run_record(report_path.parent, "eval", args, {"ckpt": str(args.ckpt), "corpus": str(args.corpus)}, seed)
    for name, entry in report["classes"].items():
        print(f"{name}: invariance {entry['invariance_ratio']:.4f} purity {entry['cluster_purity']:.3f}")
    return 0


def cmd_synthesize(args, extra):
    from .corpus import load_corpus
    from .inference import transfer

    refs = _ref_flags(extra)
    model, index = _load_model(args.ckpt)
    corpus = load_corpus(args.corpus)
    frames = _ref_frames(corpus, index["class_names"], refs)
    text = _text_arg(args.text, model.config.vocab_size)
    out = transfer(model, [frames[c] for c in index["class_names"]], text, args.max_steps)
    meta = {"shape": list(out.frames.shape), "max_steps_exceeded": out.max_steps_exceeded, "text": text,
            "references": refs, "statistics": _statistics(out.frames, len(text))}
    _write_frames(args.out, out.frames, meta)
    write_run_record(Path(args.out).parent, "synthesize", args, {"refs": refs, "text": text}, None)
    if out.max_steps_exceeded:
        log.warning("decoder hit max_steps before predicting a stop")
    print(f"wrote {out.length} frames to {args.out}")
    return 0


def cmd_interpolate(args, extra):
    from .corpus import load_corpus
    from .inference import extract_style, interpolate, synthesize

    refs = _ref_flags(extra)
    model, index = _load_model(args.ckpt)
    names = index["class_names"]
    if args.style_class not in names:
        raise UsageError(f"--class {args.style_class!r} is not one of {names}")
    corpus = load_corpus(args.corpus)
    fixed = _ref_frames(corpus, names, {c: u for c, u in refs.items()}, required=False)
    missing = [c for c in names if c != args.style_class and c not in fixed]
    if missing:
        raise UsageError("missing reference flags: " + " ".join(f"--ref-{c} <utt_id>" for c in missing))
    n = names.index(args.style_class)
    text = _text_arg(args.text, model.config.vocab_size)
    se_from = extract_style(model, n, corpus.frames[corpus.index_of(args.from_utt)])
    se_to = extract_style(model, n, corpus.frames[corpus.index_of(args.to_utt)])
    steps = args.alpha_steps
    if steps < 2:
        raise UsageError("--alpha-steps must be at least 2")
    alphas = [k / (steps - 1) for k in range(steps)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"class": args.style_class, "from": args.from_utt, "to": args.to_utt, "text": text, "steps": []}
    for k, a in enumerate(alphas):
        embs = [interpolate(se_from, se_to, a) if m == n else extract_style(model, m, fixed[c])
                for m, c in enumerate(names)]
        syn = synthesize(model, embs, text, args.max_steps)
        path = out_dir / f"alpha_{k:02d}.f32"
        _write_frames(path, syn.frames, {"alpha": a, "shape": list(syn.frames.shape)})
        report["steps"].append({"alpha": a, "file": path.name, "length": syn.length,
                                "max_steps_exceeded": syn.max_steps_exceeded,
                                "statistics": _statistics(syn.frames, len(text))})
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    write_run_record(out_dir, "interpolate", args, {"refs": refs, "alphas": alphas}, None)
    print(f"wrote {steps} interpolation steps to {out_dir}")
    return 0


def cmd_sample_random(args, extra):
    from .corpus import load_corpus
    from .inference import extract_style, random_style, synthesize

    refs = _ref_flags(extra)
    model, index = _load_model(args.ckpt)
    names = index["class_names"]
    fixed = {}
    if refs:
        if args.corpus is None:
            raise UsageError("--ref-<class> flags need --corpus")
        fixed = _ref_frames(load_corpus(args.corpus), names, refs, required=False)
    seed = args.seed or 0
    rng = np.random.default_rng(seed)
    text = _text_arg(args.text, model.config.vocab_size)
    embs = [extract_style(model, m, fixed[c]) if c in fixed else random_style(model, m, rng)
            for m, c in enumerate(names)]
    syn = synthesize(model, embs, text, args.max_steps)
    meta = {"shape": list(syn.frames.shape), "seed": seed, "random_classes": [c for c in names if c not in fixed],
            "statistics": _statistics(syn.frames, len(text))}
    _write_frames(args.out, syn.frames, meta)
    write_run_record(Path(args.out).parent, "sample-random", args, {"refs": refs, "text": text}, seed)
    print(f"wrote {syn.length} frames to {args.out}")
    return 0


def cmd_export_embeddings(args, extra):
    from .corpus import load_corpus
    from .evaluation import export_embeddings

    model, _ = _load_model(args.ckpt)
    paths = export_embeddings(model, load_corpus(args.corpus), args.out)
    write_run_record(args.out, "export-embeddings", args, {"ckpt": str(args.ckpt), "corpus": str(args.corpus)}, None)
    for p in paths:
        print(p)
    return 0


def cmd_sampler_audit(args, extra):
    from .corpus import load_corpus
    from .sampler import audit

    path = args.path or args.corpus
    if path is None:
        raise UsageError("sampler audit needs a corpus directory")
    report = audit(load_corpus(path), draws=args.draws, seed=args.seed or 0, mode=args.mode or "it")
    print(json.dumps(report, indent=2))
    return 0 if report["violations"] == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intercross", description="Multi-reference style disentanglement toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, *flags):
        if "seed" in flags:
            p.add_argument("--seed", type=int)
        if "config" in flags:
            p.add_argument("--config", help="YAML settings file; flags override its values")
        if "ckpt" in flags:
            p.add_argument("--ckpt", required=True, help="checkpoint directory")
        if "corpus" in flags:
            p.add_argument("--corpus", required=True, help="corpus directory")
        if "text" in flags:
            p.add_argument("--text", required=True, help='token ids, e.g. "3 14 7"')
            p.add_argument("--max-steps", type=int, default=None)

    corpus = sub.add_parser("corpus", help="generate or validate a synthetic corpus")
    csub = corpus.add_subparsers(dest="action", metavar="action")
    gen = csub.add_parser("generate", help="render a corpus from a config file")
    common(gen, "seed", "config")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_corpus_generate)
    val = csub.add_parser("validate", help="check a corpus directory")
    val.add_argument("path", nargs="?")
    val.add_argument("--corpus")
    val.set_defaults(func=cmd_corpus_validate)

    train = sub.add_parser("train", help="train a model")
    common(train, "seed", "config", "corpus")
    train.add_argument("--mode", choices=["it", "org"])
    train.add_argument("--steps", type=int)
    train.add_argument("--batch-size", type=int, dest="batch_size")
    train.add_argument("--learning-rate", type=float, dest="learning_rate")
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    ft = sub.add_parser("finetune", help="few-shot adaptation of a checkpoint to new instances")
    common(ft, "seed", "config", "ckpt", "corpus")
    ft.add_argument("--steps", type=int)
    ft.add_argument("--batch-size", type=int, dest="batch_size")
    ft.add_argument("--learning-rate", type=float, dest="learning_rate")
    ft.add_argument("--out", required=True)
    ft.set_defaults(func=cmd_finetune, mode=None)

    ev = sub.add_parser("eval", help="write a disentanglement report")
    common(ev, "seed", "ckpt", "corpus")
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)

    syn = sub.add_parser("synthesize", help="transfer styles from references (--ref-<class> <utt_id>)")
    common(syn, "ckpt", "corpus", "text")
    syn.add_argument("--out", required=True, help="output .f32 file")
    syn.set_defaults(func=cmd_synthesize)

    interp = sub.add_parser("interpolate", help="sweep one class's style between two references")
    common(interp, "ckpt", "corpus", "text")
    interp.add_argument("--class", dest="style_class", required=True)
    interp.add_argument("--from", dest="from_utt", required=True)
    interp.add_argument("--to", dest="to_utt", required=True)
    interp.add_argument("--alpha-steps", type=int, default=5)
    interp.add_argument("--out", required=True, help="output directory")
    interp.set_defaults(func=cmd_interpolate)

    rnd = sub.add_parser("sample-random", help="synthesize with random token-bank styles")
    common(rnd, "seed", "ckpt", "text")
    rnd.add_argument("--corpus")
    rnd.add_argument("--out", required=True)
    rnd.set_defaults(func=cmd_sample_random)

    exp = sub.add_parser("export-embeddings", help="write style embeddings as TSV")
    common(exp, "ckpt", "corpus")
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_export_embeddings)

    samp = sub.add_parser("sampler", help="sampler diagnostics")
    ssub = samp.add_subparsers(dest="action", metavar="action")
    aud = ssub.add_parser("audit", help="compare sampled pairs with the exact distribution")
    aud.add_argument("path", nargs="?")
    aud.add_argument("--corpus")
    aud.add_argument("--draws", type=int, default=10_000)
    aud.add_argument("--mode", choices=["it", "org"])
    aud.add_argument("--seed", type=int)
    aud.set_defaults(func=cmd_sampler_audit)
    return parser


PASSES_REFS = {cmd_synthesize, cmd_interpolate, cmd_sample_random}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    func = getattr(args, "func", None)
    if func is None:
        parser.print_usage(sys.stderr)
        return 2
    if extra and func not in PASSES_REFS:
        parser.print_usage(sys.stderr)
        print(f"intercross: error: unrecognized arguments: {' '.join(extra)}", file=sys.stderr)
        return 2
    try:
        return func(args, extra)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"intercross: error: {exc}", file=sys.stderr)
        return 2
    except (IntercrossError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
