"""Activity-coupled multi-track target encoding/decoding and the
permutation-invariant training loss.

Frame targets are (n_tracks, n_classes, 4) arrays with components
(ax, ay, ad, o): a unit direction vector scaled by activity, the distance in
meters, and the on-screen flag. Azimuth is measured positive to the left, so
ax = cos(az) and ay = sin(az).

The loss duplicates targets per class: with ``a`` active events in a frame,
the candidate targets are all surjective assignments of the 3 tracks onto the
``a`` events (1, 6 and 6 assignments for a = 1, 2, 3), the assignment cost is
the track-mean of squared direction/distance error plus (optionally weighted)
binary cross-entropy on the on-screen component, and the frame-class loss is
the minimum over assignments. Gradients flow only through the minimizing
assignment.
"""

from __future__ import annotations

import itertools

import numpy as np

from .types import N_TRACKS, EventRecord

#: Lower clip inside the BCE logs; a prediction exactly on target still
#: yields exactly zero loss because log(1.0) == 0.
_TINY = 1e-12

#: track -> event assignment tables, keyed by active event count.
_ASSIGNMENTS = {
    1: ((0, 0, 0),),
    2: tuple(m for m in itertools.product((0, 1), repeat=N_TRACKS)
             if len(set(m)) == 2),
    3: tuple(itertools.permutations(range(N_TRACKS))),
}


def weighted_onscreen_loss_factor(o_ref: bool, enabled: bool = True,
                                  weight: float = 4.0) -> float:
    """Loss weight for the on-screen BCE term: ``weight`` when the reference
    is on-screen and the weighted variant is enabled, else 1.0."""
    return weight if (enabled and o_ref) else 1.0


def _event_target(ev: EventRecord) -> np.ndarray:
    az = np.radians(np.float64(ev.azimuth_deg))
    return np.array([np.cos(az), np.sin(az), ev.distance_m, float(ev.onscreen)])


def encode_frame(events: list[EventRecord], n_classes: int,
                 n_tracks: int = N_TRACKS) -> np.ndarray:
    """Encode one frame's events as an (n_tracks, n_classes, 4) target.

    Events of one class occupy tracks in source_id order; unused slots stay
    all-zero. More than ``n_tracks`` simultaneous events of a class is an
    error.
    """
    out = np.zeros((n_tracks, n_classes, 4))
    by_class: dict[int, list[EventRecord]] = {}
    for ev in events:
        ev.validate(n_classes)
        by_class.setdefault(ev.class_index, []).append(ev)
    for c, evs in by_class.items():
        if len(evs) > n_tracks:
            raise ValueError(
                f"{len(evs)} simultaneous events of class {c} exceed "
                f"{n_tracks} tracks")
        evs.sort(key=lambda e: e.source_id)
        for track, ev in enumerate(evs):
            out[track, c] = _event_target(ev)
    return out


def decode_frame(values: np.ndarray, frame_index: int = 0,
                 act_threshold: float = 0.5,
                 on_threshold: float = 0.5) -> list[EventRecord]:
    """Decode an (n_tracks, n_classes, 4) prediction into EventRecords.

    A (track, class) slot is active when its direction norm exceeds
    ``act_threshold``; the distance component is divided by that norm to undo
    the activity coupling.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[-1] != 4:
        raise ValueError(f"expected (n_tracks, n_classes, 4), got {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("non-finite prediction values")
    events = []
    n_tracks, n_classes, _ = values.shape
    for c in range(n_classes):
        for track in range(n_tracks):
            ax, ay, ad, o = values[track, c]
            norm = np.sqrt(ax * ax + ay * ay)
            if norm <= act_threshold:
                continue
            az = float(np.degrees(np.arctan2(ay, ax)))
            events.append(EventRecord(
                frame_index=frame_index,
                class_index=c,
                source_id=track,
                azimuth_deg=min(90.0, max(-90.0, az)),
                distance_m=float(ad / max(norm, 1e-8)),
                onscreen=bool(o > on_threshold),
            ))
    return events


def events_by_frame(records: list[EventRecord], n_frames: int) -> list[list[EventRecord]]:
    """Bucket flat records into per-frame lists of length ``n_frames``."""
    frames: list[list[EventRecord]] = [[] for _ in range(n_frames)]
    for r in records:
        if r.frame_index >= n_frames:
            raise ValueError(
                f"frame_index {r.frame_index} outside grid of {n_frames} frames")
        frames[r.frame_index].append(r)
    return frames


def encode_labels(records: list[EventRecord], n_frames: int,
                  n_classes: int) -> np.ndarray:
    """Encode a flat record list into a (n_frames, n_tracks, n_classes, 4)
    target sequence."""
    return np.stack([encode_frame(evs, n_classes)
                     for evs in events_by_frame(records, n_frames)])


def adpit_loss(pred: np.ndarray, refs: list[list[EventRecord]],
               onscreen_weight: float = 1.0):
    """Permutation-invariant loss over a (T, n_tracks, n_classes, 4) prediction.

    ``refs`` holds the reference events per frame. Returns ``(loss, grad)``
    with ``grad`` the exact gradient w.r.t. ``pred`` (through the minimizing
    assignment only).
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 4 or pred.shape[1] != N_TRACKS or pred.shape[-1] != 4:
        raise ValueError(
            f"expected (T, {N_TRACKS}, n_classes, 4) prediction, got {pred.shape}")
    n_frames, _, n_classes, _ = pred.shape
    if len(refs) != n_frames:
        raise ValueError(
            f"misaligned lengths: {n_frames} predicted frames vs "
            f"{len(refs)} reference frames")

    px, py, pd, po = (pred[..., i] for i in range(4))  # each (T, N, C)

    # Zero-target cost for every cell, vectorized: the bulk of (frame, class)
    # cells has no active events. Track costs are sorted before the reduction
    # so the loss is bitwise invariant under track permutations.
    one_m_po = np.maximum(1.0 - po, _TINY)
    cell0 = np.sort((px * px + py * py + pd * pd) / 3.0 - np.log(one_m_po),
                    axis=1)
    cost = (cell0[:, 0, :] + cell0[:, 1, :] + cell0[:, 2, :]) / 3.0  # (T, C)

    grad = np.empty_like(pred)
    grad[..., 0] = 2.0 * px / 9.0
    grad[..., 1] = 2.0 * py / 9.0
    grad[..., 2] = 2.0 * pd / 9.0
    grad[..., 3] = np.where(1.0 - po > _TINY, 1.0 / one_m_po, 0.0) / 3.0

    for t, frame_events in enumerate(refs):
        by_class: dict[int, list[EventRecord]] = {}
        for ev in frame_events:
            ev.validate(n_classes)
            by_class.setdefault(ev.class_index, []).append(ev)
        for c, evs in by_class.items():
            if len(evs) > N_TRACKS:
                raise ValueError(
                    f"frame {t}: {len(evs)} simultaneous events of class {c} "
                    f"exceed {N_TRACKS} tracks")
            evs.sort(key=lambda e: e.source_id)
            targets = np.stack([_event_target(ev) for ev in evs])  # (a, 4)
            weights = np.array([
                weighted_onscreen_loss_factor(ev.onscreen, weight=onscreen_weight)
                for ev in evs])
            cost[t, c], grad[t, :, c, :] = _cell_min(
                pred[t, :, c, :], targets, weights)

    loss = float(cost.sum() / (n_frames * n_classes))
    grad /= n_frames * n_classes
    return loss, grad


def _cell_min(p: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Minimum assignment cost and its gradient for one (frame, class) cell.

    p: (n_tracks, 4) prediction slice; targets: (a, 4) event targets in
    source order; weights: (a,) BCE weights.
    """
    table = _ASSIGNMENTS[targets.shape[0]]
    idx = np.array(table)  # (n_assign, n_tracks)
    tgt = targets[idx]  # (n_assign, n_tracks, 4)
    w = weights[idx]  # (n_assign, n_tracks)

    dx = p[:, 0] - tgt[..., 0]
    dy = p[:, 1] - tgt[..., 1]
    dd = p[:, 2] - tgt[..., 2]
    mse = (dx * dx + dy * dy + dd * dd) / 3.0

    o = p[:, 3]
    o_ref = tgt[..., 3]
    log_o = np.log(np.maximum(o, _TINY))
    log_1mo = np.log(np.maximum(1.0 - o, _TINY))
    bce = -np.where(o_ref == 1.0, log_o, log_1mo)

    track_cost = np.sort(mse + w * bce, axis=1)  # (n_assign, n_tracks)
    costs = (track_cost[:, 0] + track_cost[:, 1] + track_cost[:, 2]) / 3.0
    best = int(np.argmin(costs))

    g = np.empty_like(p)
    g[:, 0] = 2.0 * dx[best] / 9.0
    g[:, 1] = 2.0 * dy[best] / 9.0
    g[:, 2] = 2.0 * dd[best] / 9.0
    d_bce = np.where(
        o_ref[best] == 1.0,
        -np.where(o > _TINY, 1.0 / np.maximum(o, _TINY), 0.0),
        np.where(1.0 - o > _TINY, 1.0 / np.maximum(1.0 - o, _TINY), 0.0))
    g[:, 3] = w[best] * d_bce / 3.0
    return float(costs[best]), g
