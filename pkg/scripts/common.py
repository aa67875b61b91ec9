"""Shared setup for the experiment scripts: config, data and a cached checkpoint."""

import argparse
import dataclasses
from pathlib import Path

from mmel.config import load_config
from mmel.datagen import generate_splits
from mmel.pipeline import load_checkpoint, save_checkpoint, train_checkpoint


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--epochs", type=int, default=50, help="training epochs (default: 50)")
    p.add_argument("--checkpoint", type=Path, help="reuse this checkpoint if present, else train and save it")
    return p


def setup(args):
    """Return (config, splits, checkpoint) for the parsed arguments."""
    cfg = load_config(args.config, [*args.set, f"train.epochs = {args.epochs}"])
    splits = generate_splits(cfg.data)
    if args.checkpoint is not None and args.checkpoint.exists():
        return cfg, splits, load_checkpoint(args.checkpoint)
    spec = cfg.network_spec(cfg.data.input_dim, int(splits.train.labels.max()) + 1)
    ckpt = train_checkpoint(spec, cfg.train, splits.train.vectors, splits.train.labels)
    if args.checkpoint is not None:
        save_checkpoint(args.checkpoint, ckpt)
    return cfg, splits, ckpt


def with_p(scoring, p: int):
    return dataclasses.replace(scoring, p=p)
