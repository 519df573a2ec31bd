"""Keypoint-based on-screen override.

Predictions of person-related classes that point near a detected person are
forced on-screen; azimuth, distance and class are never touched (replacing
the DOA itself measurably hurt, so only the flag is refined). Class-to-
keypoint rules live in the ClassMap: nose for speech/laughter, the wrist pair
for clapping, the ankle pair for footsteps; pair rules need both keypoints
present at sufficient confidence and use the mean of the two keypoint
azimuths.
"""

from __future__ import annotations

import math
from dataclasses import replace

from .types import ClassMap, EventRecord, KeypointFrame

_RULES = {
    "nose": ("nose",),
    "wrists": ("wrist_left", "wrist_right"),
    "ankles": ("ankle_left", "ankle_right"),
}


def pixel_to_azimuth(u: float, fov_h_deg: float = 100.0) -> float:
    """Map a normalized horizontal pixel coordinate to azimuth in degrees
    through a pinhole camera: u = 0 is the left edge (+fov/2, azimuth is
    positive to the left), u = 0.5 the optical axis."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u outside [0, 1]: {u}")
    if not 0.0 < fov_h_deg < 180.0:
        raise ValueError(f"fov outside (0, 180): {fov_h_deg}")
    half = math.radians(fov_h_deg / 2.0)
    return math.degrees(math.atan((1.0 - 2.0 * u) * math.tan(half)))


def person_keypoint_azimuth(person: dict, rule: str, fov_h_deg: float,
                            min_conf: float) -> float | None:
    """Azimuth of one person's rule keypoints, or None when the rule's
    keypoints are missing or below the confidence threshold."""
    azimuths = []
    for name in _RULES[rule]:
        kp = person.get(name)
        if kp is None or kp[2] < min_conf:
            return None
        azimuths.append(pixel_to_azimuth(kp[0], fov_h_deg))
    return sum(azimuths) / len(azimuths)


def apply_keypoint_override(preds: list[list[EventRecord]],
                            keypoints: list[KeypointFrame],
                            class_map: ClassMap,
                            gate_deg: float = 20.0,
                            min_conf: float = 0.5,
                            fov_h_deg: float = 100.0) -> list[list[EventRecord]]:
    """Set onscreen=True on predictions of mapped classes whose azimuth lies
    within ``gate_deg`` of a visible person's keypoint azimuth.

    Keypoint frames are matched to label frames by nearest frame index, so
    both per-label-frame and sparser keypoint files work. Without any
    keypoint frames the predictions pass through unchanged.
    """
    if not keypoints:
        return [list(frame) for frame in preds]
    kp_frames = sorted(keypoints, key=lambda f: f.frame_index)
    kp_indices = [f.frame_index for f in kp_frames]

    out = []
    for t, frame_preds in enumerate(preds):
        kp = kp_frames[_nearest(kp_indices, t)]
        new_frame = []
        for ev in frame_preds:
            rule = class_map.keypoint_classes.get(ev.class_index)
            if rule is not None and not ev.onscreen:
                for person in kp.persons:
                    az = person_keypoint_azimuth(person, rule, fov_h_deg, min_conf)
                    if az is not None and abs(az - ev.azimuth_deg) <= gate_deg:
                        ev = replace(ev, onscreen=True)
                        break
            new_frame.append(ev)
        out.append(new_frame)
    return out


def _nearest(sorted_indices: list[int], target: int) -> int:
    """Index into sorted_indices of the value closest to target (ties to the
    earlier frame)."""
    import bisect

    pos = bisect.bisect_left(sorted_indices, target)
    if pos == 0:
        return 0
    if pos == len(sorted_indices):
        return len(sorted_indices) - 1
    before, after = sorted_indices[pos - 1], sorted_indices[pos]
    return pos - 1 if target - before <= after - target else pos
