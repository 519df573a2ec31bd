"""Agreement-based fusion of per-frame predictions from several systems.

Per frame and class, detections are sorted by azimuth and chained into
clusters wherever consecutive azimuths are within the gate (so any two
members of a 2-detection cluster are within the gate of each other; the
chain rule also makes clustering invariant under azimuth mirroring). A
cluster is emitted when it contains detections from at least two distinct
systems; for the designated single-system classes (bell/knock) one detection
suffices. Emitted azimuth and distance are the member means, on-screen is the
member OR, and at most three events per class per frame survive (largest
clusters first, tighter clusters on ties).

Emitted source ids are arbitrary enumeration order within a frame/class, not
semantic track identities.
"""

from __future__ import annotations

from dataclasses import dataclass

from .types import ClassMap, EventRecord


@dataclass
class SystemPredictions:
    system_id: str
    frames: list[list[EventRecord]]


def ensemble(systems: list[SystemPredictions], doa_gate_deg: float = 20.0,
             class_map: ClassMap | None = None,
             single_system_classes=None,
             max_per_class: int = 3) -> list[list[EventRecord]]:
    """Fuse aligned per-frame predictions; returns per-frame event lists."""
    if not systems:
        raise ValueError("need at least one system")
    n_frames = len(systems[0].frames)
    for s in systems:
        if len(s.frames) != n_frames:
            raise ValueError(
                f"misaligned frame counts: {s.system_id} has {len(s.frames)} "
                f"frames, {systems[0].system_id} has {n_frames}")
    if single_system_classes is None:
        single_system_classes = (class_map.single_system_classes
                                 if class_map is not None else frozenset())
    single_system_classes = frozenset(single_system_classes)
    n_classes = class_map.n_classes if class_map is not None else None

    out: list[list[EventRecord]] = []
    for t in range(n_frames):
        # candidates per class, in (system, event) collection order
        by_class: dict[int, list[tuple[int, EventRecord]]] = {}
        for si, s in enumerate(systems):
            for ev in s.frames[t]:
                if n_classes is not None and not 0 <= ev.class_index < n_classes:
                    raise ValueError(
                        f"{s.system_id}: unknown class index {ev.class_index}")
                by_class.setdefault(ev.class_index, []).append((si, ev))
        frame_events: list[EventRecord] = []
        for c in sorted(by_class):
            clusters = _cluster(by_class[c], doa_gate_deg)
            emitted = [cl for cl in clusters
                       if len({si for si, _ in cl}) >= 2
                       or c in single_system_classes]
            if len(emitted) > max_per_class:
                emitted.sort(key=_cluster_rank)
                emitted = emitted[:max_per_class]
            for source_id, cl in enumerate(emitted):
                frame_events.append(_fuse(cl, t, c, source_id))
        out.append(frame_events)
    return out


def _cluster(candidates, gate):
    """Chain-cluster candidates on sorted azimuth with a consecutive gap
    gate; members keep their original collection order inside a cluster."""
    order = sorted(range(len(candidates)),
                   key=lambda i: candidates[i][1].azimuth_deg)
    clusters: list[list[int]] = []
    prev_az = None
    for i in order:
        az = candidates[i][1].azimuth_deg
        if prev_az is None or az - prev_az > gate:
            clusters.append([])
        clusters[-1].append(i)
        prev_az = az
    # collection order within each cluster makes the member sums exact
    # mirror images under azimuth negation
    return [[candidates[i] for i in sorted(cl)] for cl in clusters]


def _anchored_mean(values):
    """Mean computed as first + mean(offsets): exact on identical members and
    an exact mirror image under negation of every value."""
    first = values[0]
    total = 0.0
    for v in values:
        total += v - first
    return first + total / len(values)


def _member_mean_az(cluster):
    return _anchored_mean([ev.azimuth_deg for _, ev in cluster])


def _cluster_rank(cluster):
    centroid = _member_mean_az(cluster)
    spread = 0.0
    for _, ev in cluster:
        spread += abs(ev.azimuth_deg - centroid)
    return (-len(cluster), spread / len(cluster), abs(centroid))


def _fuse(cluster, frame_index, class_index, source_id) -> EventRecord:
    azimuths = [ev.azimuth_deg for _, ev in cluster]
    # rounding could nudge the mean a hair outside the member hull; clamp
    az = min(max(_anchored_mean(azimuths), min(azimuths)), max(azimuths))
    return EventRecord(
        frame_index=frame_index,
        class_index=class_index,
        source_id=source_id,
        azimuth_deg=az,
        distance_m=_anchored_mean([ev.distance_m for _, ev in cluster]),
        onscreen=any(ev.onscreen for _, ev in cluster),
    )
