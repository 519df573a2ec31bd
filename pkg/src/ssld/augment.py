"""Channel-swap augmentation: exchange the stereo channels and mirror the
matching labels (and keypoints, when present). Doubles a training manifest."""

from __future__ import annotations

from dataclasses import replace

from .types import EventRecord, KeypointFrame, StereoClip

_MIRROR_NAMES = {
    "wrist_left": "wrist_right", "wrist_right": "wrist_left",
    "ankle_left": "ankle_right", "ankle_right": "ankle_left",
}


def swap_channels(clip: StereoClip) -> StereoClip:
    """Left/right exchanged; metadata untouched. Involutive bit-for-bit."""
    return StereoClip(
        samples_left=clip.samples_right.copy(),
        samples_right=clip.samples_left.copy(),
        sample_rate_hz=clip.sample_rate_hz,
        clip_id=clip.clip_id,
    )


def swap_labels(events: list[EventRecord]) -> list[EventRecord]:
    """Mirror azimuths (az -> -az); distance and on-screen flags are
    geometric invariants of the left/right swap."""
    return [replace(ev, azimuth_deg=-ev.azimuth_deg) for ev in events]


def mirror_keypoints(frames: list[KeypointFrame]) -> list[KeypointFrame]:
    """Horizontal image flip: u -> 1 - u, with left/right keypoint names
    exchanged so limb semantics follow the mirrored person."""
    out = []
    for frame in frames:
        persons = []
        for person in frame.persons:
            persons.append({
                _MIRROR_NAMES.get(name, name): (1.0 - u, v, conf)
                for name, (u, v, conf) in person.items()
            })
        out.append(KeypointFrame(frame_index=frame.frame_index, persons=persons))
    return out


def augment_manifest(items: list[dict]) -> list[dict]:
    """Given manifest items ``{"clip_id", "clip", "events", "keypoints"?}``,
    return originals plus channel-swapped copies with distinct ids."""
    out = []
    for item in items:
        out.append(item)
        swapped = {
            "clip_id": item["clip_id"] + "_acs",
            "clip": swap_channels(item["clip"]),
            "events": swap_labels(item["events"]),
        }
        if item.get("keypoints") is not None:
            swapped["keypoints"] = mirror_keypoints(item["keypoints"])
        out.append(swapped)
    return out
