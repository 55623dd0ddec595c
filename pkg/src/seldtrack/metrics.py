"""Joint location-sensitive detection and localization metrics.

Per frame, predictions and references of the same class are paired by a
minimum-total-angular-distance assignment. A pair within the distance
threshold is a true positive; a pair beyond it counts one false positive and
one false negative; unmatched entries count as FP/FN directly. The error rate
aggregates substitutions/deletions/insertions over fixed-length segments
(default 1 s), S = min(FP, FN), D = max(0, FN-FP), I = max(0, FP-FN), against
the reference count N. The class-dependent localization error LE is the mean
distance over *all* class-matched pairs (threshold-independent) and LR the
fraction of references that received a class match.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .geometry import DoaAngle, angular_distance, great_circle_deg
from .scenes import LabelGrid

BRUTE_FORCE_LIMIT = 3


@dataclass
class MetricsConfig:
    threshold_deg: float = 20.0
    segment_len_frames: int = 10

    def __post_init__(self):
        if self.threshold_deg <= 0:
            raise ValidationError("distance threshold must be positive")
        if self.segment_len_frames < 1:
            raise ValidationError("segment length must be at least one frame")


@dataclass
class MetricsReport:
    er: float
    f: float
    le_deg: float | None   # None = no class matches anywhere (sentinel)
    lr: float | None       # None = no references at all (sentinel)
    tp: int
    fp: int
    fn: int
    s: int
    d: int
    i: int
    n_ref: int
    n_matched: int
    n_frames: int

    def to_dict(self) -> dict:
        return {
            "er_le_threshold": self.er,
            "f_le_threshold": self.f,
            "le_cd_deg": self.le_deg,
            "lr_cd": self.lr,
            "counts": {
                "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "s": self.s, "d": self.d, "i": self.i,
                "n_ref": self.n_ref, "n_matched": self.n_matched,
                "n_frames": self.n_frames,
            },
        }


def _assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-total-cost assignment; exhaustive for small matrices, Hungarian
    beyond (the two agree, which the tests pin)."""
    n, m = cost.shape
    if max(n, m) <= BRUTE_FORCE_LIMIT:
        k = min(n, m)
        best, best_pair = None, (np.empty(0, int), np.empty(0, int))
        rows_iter = itertools.combinations(range(n), k) if n >= m else [tuple(range(n))]
        for rows in rows_iter:
            for cols in itertools.permutations(range(m), k):
                total = cost[list(rows), list(cols)].sum()
                if best is None or total < best:
                    best = total
                    best_pair = (np.array(rows, int), np.array(cols, int))
        return best_pair
    return linear_sum_assignment(cost)


def match_frame(
    preds: list[tuple[int, DoaAngle]], refs: list[tuple[int, DoaAngle]]
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Class-wise minimum-distance matching of one frame.

    Returns (matches, unmatched_pred_indices, unmatched_ref_indices) where a
    match is (pred_index, ref_index, distance_deg). Entries of a class present
    on only one side are all unmatched.
    """
    matches: list[tuple[int, int, float]] = []
    matched_p: set[int] = set()
    matched_r: set[int] = set()
    classes = {c for c, _ in preds} & {c for c, _ in refs}
    for cls in sorted(classes):
        p_idx = [i for i, (c, _) in enumerate(preds) if c == cls]
        r_idx = [j for j, (c, _) in enumerate(refs) if c == cls]
        cost = np.array(
            [[angular_distance(preds[i][1], refs[j][1]) for j in r_idx] for i in p_idx]
        )
        rows, cols = _assignment(cost)
        for r, c in zip(rows, cols):
            matches.append((p_idx[r], r_idx[c], float(cost[r, c])))
            matched_p.add(p_idx[r])
            matched_r.add(r_idx[c])
    unmatched_p = [i for i in range(len(preds)) if i not in matched_p]
    unmatched_r = [j for j in range(len(refs)) if j not in matched_r]
    return matches, unmatched_p, unmatched_r


class MetricsAccumulator:
    """Streaming accumulation over many (prediction, reference) grid pairs."""

    def __init__(self, config: MetricsConfig | None = None):
        self.config = config or MetricsConfig()
        self.tp = self.fp = self.fn = 0
        self.s = self.d = self.i = 0
        self.n_ref = 0
        self.n_frames = 0
        self.match_dist_sum = 0.0
        self.n_matched = 0

    def update(self, pred: LabelGrid, ref: LabelGrid) -> None:
        n_frames = max(pred.n_frames, ref.n_frames)
        seg_len = self.config.segment_len_frames
        for seg_start in range(0, n_frames, seg_len):
            seg_fp = seg_fn = seg_ref = 0
            for t in range(seg_start, min(seg_start + seg_len, n_frames)):
                p = [(c, doa) for _, c, doa in _entries(pred, t)]
                r = [(c, doa) for _, c, doa in _entries(ref, t)]
                seg_ref += len(r)
                matches, un_p, un_r = match_frame(p, r)
                for _, _, dist in matches:
                    self.match_dist_sum += dist
                    self.n_matched += 1
                    if dist <= self.config.threshold_deg:
                        self.tp += 1
                    else:
                        seg_fp += 1
                        seg_fn += 1
                seg_fp += len(un_p)
                seg_fn += len(un_r)
            self.fp += seg_fp
            self.fn += seg_fn
            self.s += min(seg_fp, seg_fn)
            self.d += max(0, seg_fn - seg_fp)
            self.i += max(0, seg_fp - seg_fn)
            self.n_ref += seg_ref
        self.n_frames += n_frames

    def report(self) -> MetricsReport:
        f_den = 2 * self.tp + self.fp + self.fn
        f = 2 * self.tp / f_den if f_den > 0 else 0.0
        er = (self.s + self.d + self.i) / self.n_ref if self.n_ref > 0 else 0.0
        le = self.match_dist_sum / self.n_matched if self.n_matched > 0 else None
        lr = self.n_matched / self.n_ref if self.n_ref > 0 else None
        return MetricsReport(
            er=er, f=f, le_deg=le, lr=lr,
            tp=self.tp, fp=self.fp, fn=self.fn,
            s=self.s, d=self.d, i=self.i,
            n_ref=self.n_ref, n_matched=self.n_matched, n_frames=self.n_frames,
        )


def _entries(grid: LabelGrid, t: int):
    if t >= grid.n_frames:
        return []
    return grid.frame_entries(t)


def compute_metrics(pred: LabelGrid, ref: LabelGrid, config: MetricsConfig | None = None) -> MetricsReport:
    """Metrics of one prediction grid against one reference grid; the shorter
    grid is implicitly padded with silence."""
    acc = MetricsAccumulator(config)
    acc.update(pred, ref)
    return acc.report()
