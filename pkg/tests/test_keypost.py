import math

import numpy as np
import pytest

from ssld import keypost
from ssld.types import EventRecord, KeypointFrame, default_class_map

CLASSES = default_class_map()
SPEECH = CLASSES.index_of("female_speech")
CLAP = CLASSES.index_of("clapping")
MUSIC = CLASSES.index_of("music")


def ev(frame=0, cls=SPEECH, az=0.0, on=False, dist=1.0, src=0):
    return EventRecord(frame, cls, src, az, dist, on)


def person(**kps):
    return {name: tuple(v) for name, v in kps.items()}


class TestPixelToAzimuth:
    def test_center_is_zero(self):
        assert keypost.pixel_to_azimuth(0.5) == 0.0

    def test_left_edge_is_half_fov(self):
        assert keypost.pixel_to_azimuth(0.0, 100.0) == pytest.approx(50.0, abs=1e-9)
        assert keypost.pixel_to_azimuth(1.0, 100.0) == pytest.approx(-50.0, abs=1e-9)

    def test_quarter_with_90_fov(self):
        want = math.degrees(math.atan(0.5))
        assert keypost.pixel_to_azimuth(0.25, 90.0) == pytest.approx(want, abs=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="u outside"):
            keypost.pixel_to_azimuth(1.2)
        with pytest.raises(ValueError, match="fov"):
            keypost.pixel_to_azimuth(0.5, 190.0)


def kp_frame_at_azimuth(az_deg, frame=0, name="nose", conf=0.9, fov=100.0):
    # invert the pinhole model for the test fixture
    u = (1.0 - math.tan(math.radians(az_deg)) / math.tan(math.radians(fov / 2))) / 2.0
    return KeypointFrame(frame, [person(**{name: (u, 0.4, conf)})])


class TestOverride:
    def test_speech_near_nose_forced_onscreen(self):
        preds = [[ev(az=5.0)]]
        out = keypost.apply_keypoint_override(preds, [kp_frame_at_azimuth(10.0)],
                                              CLASSES)
        assert out[0][0].onscreen
        assert out[0][0].azimuth_deg == 5.0

    def test_outside_gate_unchanged(self):
        preds = [[ev(az=50.0)]]
        out = keypost.apply_keypoint_override(preds, [kp_frame_at_azimuth(10.0)],
                                              CLASSES)
        assert not out[0][0].onscreen

    def test_unmapped_class_unchanged(self):
        preds = [[ev(cls=MUSIC, az=10.0)]]
        out = keypost.apply_keypoint_override(preds, [kp_frame_at_azimuth(10.0)],
                                              CLASSES)
        assert not out[0][0].onscreen

    def test_wrist_rule_averages_both(self):
        fov = 100.0
        u_at = lambda az: (1.0 - math.tan(math.radians(az))
                           / math.tan(math.radians(fov / 2))) / 2.0
        frame = KeypointFrame(0, [person(wrist_left=(u_at(20.0), 0.5, 0.9),
                                         wrist_right=(u_at(10.0), 0.5, 0.9))])
        # average wrist azimuth ~15 deg; prediction at 14 is within gate
        out = keypost.apply_keypoint_override([[ev(cls=CLAP, az=14.0)]],
                                              [frame], CLASSES)
        assert out[0][0].onscreen

    def test_wrist_rule_requires_both(self):
        frame = KeypointFrame(0, [person(wrist_left=(0.5, 0.5, 0.9))])
        out = keypost.apply_keypoint_override([[ev(cls=CLAP, az=0.0)]],
                                              [frame], CLASSES)
        assert not out[0][0].onscreen

    def test_low_confidence_ignored(self):
        out = keypost.apply_keypoint_override(
            [[ev(az=10.0)]], [kp_frame_at_azimuth(10.0, conf=0.3)], CLASSES)
        assert not out[0][0].onscreen

    def test_no_keypoints_identity(self):
        preds = [[ev(az=10.0, on=True)], [ev(az=-5.0)]]
        assert keypost.apply_keypoint_override(preds, [], CLASSES) == preds

    def test_nearest_frame_lookup(self):
        # keypoints only at frames 0 and 10; frame 7 uses frame 10's person
        kps = [kp_frame_at_azimuth(60.0, frame=0), kp_frame_at_azimuth(0.0, frame=10)]
        preds = [[] for _ in range(11)]
        preds[7] = [ev(frame=7, az=2.0)]
        out = keypost.apply_keypoint_override(preds, kps, CLASSES)
        assert out[7][0].onscreen

    def test_gate_monotone(self):
        preds = [[ev(az=25.0)]]
        kps = [kp_frame_at_azimuth(0.0)]
        flipped = [keypost.apply_keypoint_override(preds, kps, CLASSES,
                                                   gate_deg=g)[0][0].onscreen
                   for g in (5.0, 20.0, 26.0, 40.0)]
        assert flipped == sorted(flipped)

    @pytest.mark.parametrize("seed", range(6))
    def test_non_spatial_and_one_way(self, seed):
        rng = np.random.default_rng(seed)
        preds = []
        for t in range(5):
            preds.append([
                ev(frame=t, cls=int(rng.integers(0, 13)),
                   az=float(rng.uniform(-90, 90)),
                   dist=float(rng.uniform(0.5, 4)), on=bool(rng.integers(2)),
                   src=i)
                for i in range(rng.integers(0, 4))])
        kps = [KeypointFrame(t, [person(
            nose=(float(rng.uniform(0, 1)), 0.5, float(rng.uniform(0, 1))),
            wrist_left=(float(rng.uniform(0, 1)), 0.5, 0.9),
            wrist_right=(float(rng.uniform(0, 1)), 0.5, 0.9))])
            for t in range(5)]
        out = keypost.apply_keypoint_override(preds, kps, CLASSES)
        assert [len(f) for f in out] == [len(f) for f in preds]
        for fa, fb in zip(preds, out):
            for a, b in zip(fa, fb):
                assert (a.frame_index, a.class_index, a.source_id,
                        a.azimuth_deg, a.distance_m) == (
                    b.frame_index, b.class_index, b.source_id,
                    b.azimuth_deg, b.distance_m)
                assert b.onscreen or not a.onscreen  # only false -> true
                if a.class_index not in CLASSES.keypoint_classes:
                    assert a.onscreen == b.onscreen
