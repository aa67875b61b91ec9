"""FPR95 and AUC of the PKNN score as the number of nearest centers p varies."""

from common import parser, setup, with_p

from mmel.metrics import evaluate_scores
from mmel.pipeline import score_embeddings


def main():
    args = parser(__doc__).parse_args()
    cfg, splits, ckpt = setup(args)
    z_id = ckpt.embed(splits.test.vectors)
    z_ood = ckpt.embed(splits.ood_test.vectors)
    print(f"{'p':>2} {'fpr95':>8} {'auc':>8}")
    for p in range(ckpt.index.num_classes + 1):
        scoring = with_p(cfg.scoring, p)
        r = evaluate_scores(*(score_embeddings(z, ckpt.index, "pknn", scoring) for z in (z_id, z_ood)))
        print(f"{p:>2} {r.fpr95:8.4f} {r.auc:8.4f}")


if __name__ == "__main__":
    main()
