import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssld import accddoa, augment, features, metrics
from ssld.types import EventRecord, KeypointFrame, StereoClip


def white_clip(seed=0, n=24000):
    rng = np.random.default_rng(seed)
    return StereoClip(samples_left=0.3 * rng.normal(size=n),
                      samples_right=0.3 * rng.normal(size=n),
                      clip_id=f"clip{seed}")


def ev(frame=0, cls=0, src=0, az=0.0, dist=1.0, on=False):
    return EventRecord(frame, cls, src, az, dist, on)


class TestSwapChannels:
    def test_involution_bitwise(self):
        clip = white_clip(1)
        back = augment.swap_channels(augment.swap_channels(clip))
        assert np.array_equal(back.samples_left, clip.samples_left)
        assert np.array_equal(back.samples_right, clip.samples_right)

    def test_silent_right_becomes_silent_left(self):
        clip = white_clip(2)
        clip.samples_right[:] = 0.0
        swapped = augment.swap_channels(clip)
        assert not swapped.samples_left.any()
        assert swapped.samples_right.any()

    def test_feature_equivalence(self):
        clip = white_clip(3, n=45000)
        a = features.extract_features(clip).data
        b = features.extract_features(augment.swap_channels(clip)).data
        assert np.array_equal(b[0], a[1])
        assert np.array_equal(b[1], a[0])
        assert np.array_equal(b[2], -a[2])
        assert np.array_equal(b[3], a[3])


class TestSwapLabels:
    def test_mirror(self):
        assert augment.swap_labels([ev(az=30.0)])[0].azimuth_deg == -30.0
        assert augment.swap_labels([ev(az=0.0)])[0].azimuth_deg == 0.0

    def test_involution(self):
        events = [ev(az=a) for a in (-90.0, -12.5, 0.0, 45.0, 90.0)]
        assert augment.swap_labels(augment.swap_labels(events)) == events

    def test_only_azimuth_changes(self):
        (got,) = augment.swap_labels([ev(frame=4, cls=2, src=1, az=10.0,
                                         dist=2.5, on=True)])
        assert (got.frame_index, got.class_index, got.source_id,
                got.distance_m, got.onscreen) == (4, 2, 1, 2.5, True)

    def test_metrics_invariant_under_mirror(self):
        rng = np.random.default_rng(5)
        preds = [ev(frame=f, cls=int(c), az=float(rng.uniform(-90, 90)),
                    dist=float(rng.uniform(0.5, 4)), on=bool(rng.integers(2)))
                 for f in range(6) for c in rng.integers(0, 3, size=2)]
        refs = [ev(frame=f, cls=int(c), az=float(rng.uniform(-90, 90)),
                   dist=float(rng.uniform(0.5, 4)), on=bool(rng.integers(2)))
                for f in range(6) for c in rng.integers(0, 3, size=2)]
        a = metrics.score_records(preds, refs)
        b = metrics.score_records(augment.swap_labels(preds),
                                  augment.swap_labels(refs))
        assert a.to_dict() == b.to_dict()

    @given(st.floats(-90.0, 90.0))
    @settings(max_examples=40, deadline=None)
    def test_encode_mirror_negates_y(self, az):
        base = accddoa.encode_frame([ev(az=az)], 2)
        mirrored = accddoa.encode_frame(augment.swap_labels([ev(az=az)]), 2)
        assert np.array_equal(mirrored[..., 1], -base[..., 1])
        assert np.array_equal(mirrored[..., 0], base[..., 0])
        assert np.array_equal(mirrored[..., 2:], base[..., 2:])


class TestKeypointMirror:
    def test_names_swapped_and_u_flipped(self):
        frames = [KeypointFrame(0, [{"wrist_left": (0.25, 0.5, 0.9),
                                     "nose": (0.75, 0.2, 1.0)}])]
        (got,) = augment.mirror_keypoints(frames)
        assert got.persons[0]["wrist_right"] == (0.75, 0.5, 0.9)
        assert got.persons[0]["nose"] == (0.25, 0.2, 1.0)

    def test_involution(self):
        frames = [KeypointFrame(1, [{"ankle_left": (0.3, 0.625, 0.7),
                                     "ankle_right": (0.8125, 0.625, 0.6)}])]
        back = augment.mirror_keypoints(augment.mirror_keypoints(frames))
        for (name, a), (bname, b) in zip(frames[0].persons[0].items(),
                                         back[0].persons[0].items()):
            assert name == bname
            assert a == pytest.approx(b, abs=1e-15)


class TestManifest:
    def test_doubles_with_distinct_ids(self):
        items = [{"clip_id": f"c{i}", "clip": white_clip(i),
                  "events": [ev(az=10.0 * i)]} for i in range(3)]
        out = augment.augment_manifest(items)
        assert len(out) == 6
        assert len({item["clip_id"] for item in out}) == 6

    def test_keypoints_carried_through(self):
        items = [{"clip_id": "c", "clip": white_clip(0),
                  "events": [ev()],
                  "keypoints": [KeypointFrame(0, [{"nose": (0.5, 0.5, 1.0)}])]}]
        out = augment.augment_manifest(items)
        assert out[1]["clip_id"] == "c_acs"
        assert out[1]["keypoints"][0].persons[0]["nose"] == (0.5, 0.5, 1.0)
