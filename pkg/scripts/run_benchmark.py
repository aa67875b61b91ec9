"""Synthetic end-to-end benchmark: train once, then compare scorers on held-out-class OOD."""

import time

from common import parser, setup

from mmel.metrics import evaluate_scores
from mmel.pipeline import score_embeddings


def main():
    args = parser(__doc__).parse_args()
    start = time.perf_counter()
    cfg, splits, ckpt = setup(args)
    print(f"trained {len(ckpt.history) - 1} epochs in {time.perf_counter() - start:.0f}s, "
          f"loss {ckpt.history[0].l_total:.4f} -> {ckpt.history[-1].l_total:.4f}")
    z_id = ckpt.embed(splits.test.vectors)
    z_ood = ckpt.embed(splits.ood_test.vectors)
    rows = [("knn", "knn", cfg.scoring), (f"pknn p={cfg.scoring.p}", "pknn", cfg.scoring), ("mahalanobis", "maha", cfg.scoring)]
    print(f"{'scorer':<14} {'fpr95':>8} {'auc':>8}")
    for name, scorer, scoring in rows:
        r = evaluate_scores(*(score_embeddings(z, ckpt.index, scorer, scoring) for z in (z_id, z_ood)))
        print(f"{name:<14} {r.fpr95:8.4f} {r.auc:8.4f}")


if __name__ == "__main__":
    main()
