"""``mmel`` command line: gen, train, score and eval subcommands.

Exit codes: 0 on success, 1 on a contract violation (bad input, bad file,
bad config), 2 when training diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import io
from .config import RunConfig, load_config
from .datagen import generate_splits
from .errors import ContractViolation, DivergenceError
from .metrics import evaluate_scores, histogram, histogram_text
from .pipeline import (
    SCORERS,
    enrollment_resample,
    load_checkpoint,
    save_checkpoint,
    score_embeddings,
    train_checkpoint,
)
from .scoring import CENTER_SOURCES, EnrollmentSet, ScoringConfig, enroll_novel, enroll_ood

log = logging.getLogger("mmel")

SPLIT_FILES = {
    "train": "id_train.emb",
    "test": "id_test.emb",
    "ood_test": "ood_test.emb",
    "ood_enroll": "ood_enroll.emb",
    "novel_enroll": "novel_enroll.emb",
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser, section: str, instance) -> None:
    """One flag per field; the default shown is the built-in one."""
    group = parser.add_argument_group(f"{section} settings")
    for f in dataclasses.fields(instance):
        value = getattr(instance, f.name)
        kind = type(value)
        if kind is tuple:
            kind = lambda s: tuple(int(v) for v in s.split(",") if v.strip())
        group.add_argument(
            _flag(f.name),
            dest=f"{section}.{f.name}",
            type=kind,
            default=None,
            metavar=f.name.upper(),
            help=f"(default: {_show(value)})",
        )


def _show(value) -> str:
    return ",".join(map(str, value)) if isinstance(value, tuple) else str(value)


def _common(parser) -> None:
    parser.add_argument("--config", help="key = value config file (default: none; $MMEL_CONFIG is read first)")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a namespaced config key, e.g. train.epochs=50 (repeatable; default: none)",
    )


def _resolve(args, sections) -> RunConfig:
    """Defaults < $MMEL_CONFIG < --config < --set < explicit flags."""
    overrides = list(args.set)
    for section in sections:
        for key, value in vars(args).items():
            if key.startswith(section + ".") and value is not None:
                overrides.append(f"{key} = {_show(value)}")
    return load_config(args.config, overrides)


def _network_defaults():
    from .network import NetworkSpec

    spec = NetworkSpec(1, 1)
    return {k: getattr(spec, k) for k in ("hidden_dims", "latent_dim", "curvature", "clip_radius", "activation")}


def _add_network_flags(parser) -> None:
    group = parser.add_argument_group("network settings")
    for name, value in _network_defaults().items():
        kind = type(value)
        if kind is tuple:
            kind = lambda s: tuple(int(v) for v in s.split(",") if v.strip())
        group.add_argument(
            _flag(name), dest=f"network.{name}", type=kind, default=None,
            metavar=name.upper(), help=f"(default: {_show(value)})",
        )


def _out_dir(cfg: RunConfig, explicit) -> Path:
    return Path(explicit or cfg.paths.get("out_dir", "."))


# gen


def cmd_gen(args) -> int:
    cfg = _resolve(args, ["data"])
    out = _out_dir(cfg, args.out_dir)
    splits = generate_splits(cfg.data)
    for field, name in SPLIT_FILES.items():
        part = getattr(splits, field)
        io.write_embeddings(out / name, part.vectors, part.labels)
        print(f"{name} rows={len(part)} dim={part.vectors.shape[1]}")
    return 0


# train


def _read_labeled(path):
    vectors, labels = io.read_embeddings(path)
    if labels is None:
        raise ContractViolation(f"{path} has no label column")
    return vectors, labels


def cmd_train(args) -> int:
    cfg = _resolve(args, ["train", "network"])
    out = _out_dir(cfg, args.out_dir)
    train_file = args.train_file or cfg.paths.get("train_file") or out / SPLIT_FILES["train"]
    ckpt_path = args.checkpoint or cfg.paths.get("checkpoint") or out / "model.ckpt"
    inputs, labels = _read_labeled(train_file)
    spec = cfg.network_spec(inputs.shape[1], int(labels.max()) + 1)

    def progress(epoch, report):
        if not args.quiet:
            print(f"epoch={epoch} l_total={report.l_total!r} l_com={report.l_com!r} "
                  f"l_dis={report.l_dis!r} l_hypb={report.l_hypb!r} l_ce={report.l_ce!r}", flush=True)

    ckpt = train_checkpoint(spec, cfg.train, inputs, labels, progress)
    save_checkpoint(ckpt_path, ckpt)
    first, last = ckpt.history[0], ckpt.history[-1]
    print(f"initial_loss={first.l_total!r}")
    print(f"final_loss={last.l_total!r}")
    print(f"checkpoint={ckpt_path}")
    return 0


# score


def _enrollment(ckpt, ood_path, novel_path) -> EnrollmentSet | None:
    if ood_path is None and novel_path is None:
        return None
    enr = EnrollmentSet()
    if ood_path is not None:
        vectors, _ = io.read_embeddings(ood_path)
        enr = enroll_ood(ckpt.embed(vectors))
    if novel_path is not None:
        vectors, labels = io.read_embeddings(novel_path)
        enr = enr.with_novel(enroll_novel(ckpt.embed(vectors), labels))
    return enr


def _scoring_config(args, cfg: RunConfig) -> ScoringConfig:
    base = cfg.scoring
    return ScoringConfig(
        k=base.k if args.k is None else args.k,
        p=base.p if args.p is None else args.p,
        center_source=base.center_source if args.center_source is None else args.center_source,
    )


def cmd_score(args) -> int:
    cfg = _resolve(args, [])
    ckpt = load_checkpoint(args.checkpoint)
    vectors, _ = io.read_embeddings(args.input)
    scoring = _scoring_config(args, cfg)
    enrollment = _enrollment(ckpt, args.enroll_ood, args.enroll_novel)
    scores = score_embeddings(ckpt.embed(vectors), ckpt.index, args.scorer, scoring, enrollment)
    meta = {
        "scorer": args.scorer,
        "k": min(scoring.k, ckpt.index.size),
        "p": scoring.p if args.scorer == "pknn" else 0,
        "center_source": scoring.center_source,
        "enroll_ood": args.enroll_ood or "none",
        "enroll_novel": args.enroll_novel or "none",
        "checkpoint": args.checkpoint,
        "input": args.input,
    }
    io.write_scores(args.out, scores, meta)
    print(f"scores={args.out} rows={len(scores)}")
    return 0


# eval


def _write_text(path, text: str) -> None:
    io.atomic_write(path, text.encode())


def cmd_eval(args) -> int:
    if args.enroll_resample is not None:
        return _eval_resample(args)
    if args.id_scores is None or args.ood_scores is None:
        raise ContractViolation("eval needs --id-scores and --ood-scores (or --enroll-resample)")
    _, s_id = io.read_scores(args.id_scores)
    _, s_ood = io.read_scores(args.ood_scores)
    report = evaluate_scores(s_id, s_ood)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        _write_text(args.out, text)
    if args.hist:
        _write_text(args.hist, histogram_text(*histogram(s_id, s_ood, args.bins)))
    return 0


def _eval_resample(args) -> int:
    missing = [f for f in ("checkpoint", "id_input", "ood_input", "enroll_pool") if getattr(args, f) is None]
    if missing:
        raise ContractViolation("--enroll-resample needs " + ", ".join(_flag(m) for m in missing))
    cfg = _resolve(args, [])
    ckpt = load_checkpoint(args.checkpoint)
    scoring = _scoring_config(args, cfg)
    embed = lambda path: ckpt.embed(io.read_embeddings(path)[0])
    novel = _enrollment(ckpt, None, args.enroll_novel)
    summary = enrollment_resample(
        embed(args.id_input), embed(args.ood_input), embed(args.enroll_pool), ckpt.index,
        scoring, args.enroll_size, args.enroll_resample, args.seed, novel,
    )
    fields = {"enroll_size": str(args.enroll_size), **summary.fields()}
    text = "".join(f"{k}={v}\n" for k, v in fields.items())
    sys.stdout.write(text)
    if args.out:
        _write_text(args.out, text)
    return 0


# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: off)")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = RunConfig()

    gen = sub.add_parser("gen", help="write synthetic ID/OOD embedding files")
    _common(gen)
    gen.add_argument("--out-dir", help="output directory (default: paths.out_dir or .)")
    _add_dataclass_flags(gen, "data", defaults.data)
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train the network and write a checkpoint")
    _common(train)
    train.add_argument("--out-dir", help="directory for default paths (default: paths.out_dir or .)")
    train.add_argument("--train-file", help="labeled embedding file (default: OUT_DIR/id_train.emb)")
    train.add_argument("--checkpoint", help="checkpoint to write (default: OUT_DIR/model.ckpt)")
    train.add_argument("--quiet", action="store_true", help="no per-epoch lines (default: off)")
    _add_dataclass_flags(train, "train", defaults.train)
    _add_network_flags(train)
    train.set_defaults(func=cmd_train)

    score = sub.add_parser("score", help="score an embedding file against a checkpoint")
    _common(score)
    score.add_argument("--checkpoint", required=True, help="trained checkpoint (required)")
    score.add_argument("--input", required=True, help="embedding file to score (required)")
    score.add_argument("--out", required=True, help="score file to write (required)")
    _add_scoring_flags(score, defaults.scoring)
    score.add_argument("--scorer", choices=SCORERS, default="pknn", help="(default: pknn)")
    score.add_argument("--enroll-ood", help="input file of OOD samples to enroll (default: none)")
    score.add_argument("--enroll-novel", help="input file of novel-class samples to enroll (default: none)")
    score.set_defaults(func=cmd_score)

    ev = sub.add_parser("eval", help="FPR95/AUC report and score histogram")
    _common(ev)
    ev.add_argument("--id-scores", help="score file of ID samples")
    ev.add_argument("--ood-scores", help="score file of OOD samples")
    ev.add_argument("--out", help="write the metric report here too (default: stdout only)")
    ev.add_argument("--hist", help="histogram file to write (default: none)")
    ev.add_argument("--bins", type=int, default=50, help="histogram bins (default: 50)")
    ev.add_argument(
        "--enroll-resample", "--trials", dest="enroll_resample", type=int, nargs="?", const=20, default=None,
        metavar="N", help="repeat OOD enrollment N times and report mean and std (default when given: 20)",
    )
    ev.add_argument("--checkpoint", help="checkpoint for --enroll-resample")
    ev.add_argument("--id-input", help="ID input embeddings for --enroll-resample")
    ev.add_argument("--ood-input", help="OOD input embeddings for --enroll-resample")
    ev.add_argument("--enroll-pool", help="pool of OOD inputs to draw enrollment samples from")
    ev.add_argument("--enroll-size", type=int, default=10, help="samples enrolled per trial (default: 10)")
    ev.add_argument("--enroll-novel", help="novel-class inputs enrolled in every trial (default: none)")
    ev.add_argument("--seed", type=int, default=0, help="resampling seed (default: 0)")
    _add_scoring_flags(ev, defaults.scoring)
    ev.set_defaults(func=cmd_eval)
    return parser


def _add_scoring_flags(parser, scoring: ScoringConfig) -> None:
    parser.add_argument("--k", type=int, default=None, help=f"k-th neighbour (default: {scoring.k}, capped at index size)")
    parser.add_argument("--p", type=int, default=None, help=f"nearest class centers averaged (default: {scoring.p})")
    parser.add_argument("--center-source", choices=CENTER_SOURCES, default=None,
                        help=f"class centers for the prototype term (default: {scoring.center_source})")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 2
    except (ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
