"""OOD evaluation metrics and their line-oriented text form.

Conventions: OOD is the positive class and larger scores mean OOD. The
FPR95 threshold is the smallest ID score such that at least 95% of ID
scores are <= it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

TPR_TARGET_PERCENT = 95


def _scores(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ContractViolation(f"{name} scores are empty")
    if not np.all(np.isfinite(x)):
        raise ContractViolation(f"{name} scores must be finite")
    return x


def fpr_at_95_tpr(id_scores, ood_scores) -> tuple[float, float]:
    """Return (fpr95, threshold)."""
    ids = np.sort(_scores(id_scores, "ID"))
    ood = _scores(ood_scores, "OOD")
    n = len(ids)
    need = -(-TPR_TARGET_PERCENT * n // 100)  # ceil(0.95 n) in integer arithmetic
    threshold = float(ids[need - 1])
    return float(np.count_nonzero(ood <= threshold) / len(ood)), threshold


def auc(id_scores, ood_scores) -> float:
    """P(OOD score > ID score) + 0.5 P(tie), from midranks."""
    ids = _scores(id_scores, "ID")
    ood = _scores(ood_scores, "OOD")
    both = np.concatenate([ids, ood])
    order = np.argsort(both, kind="stable")
    sorted_vals = both[order]
    ranks = np.empty(len(both))
    # midrank for tied runs
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(both)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2
    n_id, n_ood = len(ids), len(ood)
    u = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2
    return float(u / (n_id * n_ood))


def histogram(id_scores, ood_scores, bins: int = 50, value_range=None):
    """Shared bin edges and per-origin counts.

    Bins are left-closed and right-open except the last, which is closed;
    values outside the range are not counted.
    """
    if bins < 1:
        raise ContractViolation("bins must be >= 1")
    ids = np.asarray(id_scores, dtype=np.float64).reshape(-1)
    ood = np.asarray(ood_scores, dtype=np.float64).reshape(-1)
    if value_range is None:
        both = np.concatenate([ids, ood])
        if both.size == 0:
            raise ContractViolation("histogram of no scores needs an explicit range")
        value_range = (float(both.min()), float(both.max()))
    lo, hi = map(float, value_range)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ContractViolation(f"invalid histogram range {value_range}")
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return edges, np.histogram(ids, edges)[0], np.histogram(ood, edges)[0]


@dataclass(frozen=True)
class MetricReport:
    fpr95: float
    auc: float
    threshold: float
    n_id: int
    n_ood: int

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.fields().items())

    def fields(self) -> dict:
        return {
            "fpr95": repr(self.fpr95),
            "auc": repr(self.auc),
            "threshold": repr(self.threshold),
            "n_id": str(self.n_id),
            "n_ood": str(self.n_ood),
        }


def evaluate_scores(id_scores, ood_scores) -> MetricReport:
    fpr, lam = fpr_at_95_tpr(id_scores, ood_scores)
    return MetricReport(fpr, auc(id_scores, ood_scores), lam, len(np.ravel(id_scores)), len(np.ravel(ood_scores)))


def histogram_text(edges, id_counts, ood_counts) -> str:
    lines = ["# bin_left bin_right id_count ood_count"]
    for left, right, a, b in zip(edges[:-1], edges[1:], id_counts, ood_counts):
        lines.append(f"{float(left)!r} {float(right)!r} {int(a)} {int(b)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Parse key=value lines (``#`` comments and blanks skipped)."""
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
