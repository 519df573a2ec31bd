"""Challenge-style scoring.

A prediction is a true positive for the location-gated F1 when a same-class,
same-frame reference is assigned to it with azimuth error <= 20 degrees and
relative distance error <= 1; the on-screen F1 variant additionally requires
the on-screen flag to match. Azimuth error and relative distance error are
averaged over *all* matched pairs, independent of those gates, and the
on/off accuracy is the fraction of matched pairs whose flag agrees.
Per-frame association is a minimum-cost assignment on absolute azimuth
difference.

Statistics that have no population ("no matches") are reported as NaN and
serialize to JSON null, never silently as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import read_labels
from .types import EventRecord

DOA_GATE_DEG = 20.0
REL_DIST_GATE = 1.0


def linear_sum_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost bipartite assignment (Hungarian algorithm with
    potentials, O(n^2 m)); every row of the smaller side gets matched.

    Returns (row, col) pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-d, got shape {cost.shape}")
    if cost.size == 0:
        return []
    transposed = cost.shape[0] > cost.shape[1]
    if transposed:
        cost = cost.T
    n, m = cost.shape

    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(p[j] - 1, j - 1) for j in range(1, m + 1) if p[j]]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def match_frame(preds: list[EventRecord], refs: list[EventRecord]):
    """Assign same-class predictions to references within one frame by
    minimum total absolute azimuth difference. Returns (pred, ref) pairs in
    prediction order; items on the longer side stay unmatched."""
    if not preds or not refs:
        return []
    cost = np.abs(
        np.array([p.azimuth_deg for p in preds])[:, None]
        - np.array([r.azimuth_deg for r in refs])[None, :])
    return [(preds[i], refs[j]) for i, j in linear_sum_assignment(cost)]


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_on: int = 0
    fp_on: int = 0
    fn_on: int = 0
    n_matched: int = 0
    sum_az_err_deg: float = 0.0
    sum_rel_dist_err: float = 0.0
    n_onscreen_correct: int = 0

    @property
    def present(self) -> bool:
        return (self.tp + self.fp + self.fn) > 0

    def f1(self, on_variant: bool = False) -> float:
        tp, fp, fn = ((self.tp_on, self.fp_on, self.fn_on) if on_variant
                      else (self.tp, self.fp, self.fn))
        denom = 2 * tp + fp + fn
        return 2 * tp / denom if denom else math.nan


@dataclass
class MetricsReport:
    f1_le20_1: float
    f1_le20_1_on: float
    doae_deg: float
    rde: float
    onoff_acc: float
    per_class: dict[int, ClassCounts] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "f1_le20_1": clean(self.f1_le20_1),
            "f1_le20_1_on": clean(self.f1_le20_1_on),
            "doae_deg": clean(self.doae_deg),
            "rde": clean(self.rde),
            "onoff_acc": clean(self.onoff_acc),
            "per_class": {
                str(c): {
                    "tp": cc.tp, "fp": cc.fp, "fn": cc.fn,
                    "tp_on": cc.tp_on, "fp_on": cc.fp_on, "fn_on": cc.fn_on,
                    "n_matched": cc.n_matched,
                    "sum_az_err_deg": cc.sum_az_err_deg,
                    "sum_rel_dist_err": cc.sum_rel_dist_err,
                    "n_onscreen_correct": cc.n_onscreen_correct,
                }
                for c, cc in sorted(self.per_class.items())
            },
        }


def accumulate_counts(preds: list[list[EventRecord]],
                      refs: list[list[EventRecord]],
                      counts: dict[int, ClassCounts]) -> None:
    """Update per-class counters with one clip's per-frame event lists."""
    if len(preds) != len(refs):
        raise ValueError(
            f"frame misalignment: {len(preds)} prediction frames vs "
            f"{len(refs)} reference frames")
    for frame_preds, frame_refs in zip(preds, refs):
        classes = {e.class_index for e in frame_preds} | {
            e.class_index for e in frame_refs}
        for c in classes:
            cp = [e for e in frame_preds if e.class_index == c]
            cr = [e for e in frame_refs if e.class_index == c]
            cc = counts.setdefault(c, ClassCounts())
            pairs = match_frame(cp, cr)
            cc.fp += len(cp) - len(pairs)
            cc.fn += len(cr) - len(pairs)
            cc.fp_on += len(cp) - len(pairs)
            cc.fn_on += len(cr) - len(pairs)
            for p, r in pairs:
                az_err = abs(p.azimuth_deg - r.azimuth_deg)
                rel_d = abs(p.distance_m - r.distance_m) / r.distance_m
                cc.n_matched += 1
                cc.sum_az_err_deg += az_err
                cc.sum_rel_dist_err += rel_d
                cc.n_onscreen_correct += p.onscreen == r.onscreen
                hit = az_err <= DOA_GATE_DEG and rel_d <= REL_DIST_GATE
                if hit:
                    cc.tp += 1
                else:
                    cc.fp += 1
                    cc.fn += 1
                if hit and p.onscreen == r.onscreen:
                    cc.tp_on += 1
                else:
                    cc.fp_on += 1
                    cc.fn_on += 1


def report_from_counts(counts: dict[int, ClassCounts]) -> MetricsReport:
    present = [cc for cc in counts.values() if cc.present]
    f1 = (float(np.mean([cc.f1() for cc in present])) if present else math.nan)
    f1_on = (float(np.mean([cc.f1(on_variant=True) for cc in present]))
             if present else math.nan)
    n_matched = sum(cc.n_matched for cc in counts.values())
    if n_matched:
        doae = sum(cc.sum_az_err_deg for cc in counts.values()) / n_matched
        rde = sum(cc.sum_rel_dist_err for cc in counts.values()) / n_matched
        acc = sum(cc.n_onscreen_correct for cc in counts.values()) / n_matched
    else:
        doae = rde = acc = math.nan
    return MetricsReport(f1_le20_1=f1, f1_le20_1_on=f1_on, doae_deg=doae,
                         rde=rde, onoff_acc=acc, per_class=counts)


def score(preds: list[list[EventRecord]],
          refs: list[list[EventRecord]]) -> MetricsReport:
    """Score aligned per-frame prediction/reference event lists."""
    counts: dict[int, ClassCounts] = {}
    accumulate_counts(preds, refs, counts)
    return report_from_counts(counts)


def _to_frames(records: list[EventRecord], n_frames: int):
    frames: list[list[EventRecord]] = [[] for _ in range(n_frames)]
    for r in records:
        frames[r.frame_index].append(r)
    return frames


def score_records(pred_records: list[EventRecord],
                  ref_records: list[EventRecord]) -> MetricsReport:
    """Score flat record lists for one clip (frames aligned on a shared grid)."""
    n_frames = 1 + max(
        (r.frame_index for r in pred_records + ref_records), default=0)
    return score(_to_frames(pred_records, n_frames),
                 _to_frames(ref_records, n_frames))


def score_files(pred_csv, ref_csv) -> MetricsReport:
    """Read two label CSVs for the same clip and score them."""
    return score_records(read_labels(pred_csv), read_labels(ref_csv))
