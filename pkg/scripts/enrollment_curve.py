"""Mean FPR95 over resampled OOD enrollments as the enrollment size grows."""

from common import parser, setup

from mmel.metrics import evaluate_scores
from mmel.pipeline import enrollment_resample, score_embeddings


def main():
    p = parser(__doc__)
    p.add_argument("--sizes", default="1,3,5,10,20", help="comma-separated enrollment sizes (default: 1,3,5,10,20)")
    p.add_argument("--trials", type=int, default=20, help="resampled trials per size (default: 20)")
    args = p.parse_args()
    cfg, splits, ckpt = setup(args)
    z_id = ckpt.embed(splits.test.vectors)
    z_ood = ckpt.embed(splits.ood_test.vectors)
    pool = ckpt.embed(splits.ood_enroll.vectors)
    base = evaluate_scores(*(score_embeddings(z, ckpt.index, "pknn", cfg.scoring) for z in (z_id, z_ood)))
    print(f"{'N_e':>4} {'fpr95':>16} {'auc':>16}")
    print(f"{0:>4} {base.fpr95:8.4f}          {base.auc:8.4f}")
    for n in (int(s) for s in args.sizes.split(",")):
        s = enrollment_resample(z_id, z_ood, pool, ckpt.index, cfg.scoring, n, args.trials, cfg.train.seed)
        print(f"{n:>4} {s.fpr95_mean:8.4f}±{s.fpr95_std:.4f} {s.auc_mean:8.4f}±{s.auc_std:.4f}")


if __name__ == "__main__":
    main()
