import numpy as np
import pytest

from ssld import augment
from ssld.ensemble import SystemPredictions, ensemble
from ssld.types import EventRecord, default_class_map

CLASSES = default_class_map()
SPEECH = CLASSES.index_of("female_speech")
MUSIC = CLASSES.index_of("music")
BELL = CLASSES.bell_index


def ev(frame=0, cls=SPEECH, src=0, az=0.0, dist=1.0, on=False):
    return EventRecord(frame, cls, src, az, dist, on)


def sys_pred(sid, *frames):
    return SystemPredictions(system_id=sid, frames=list(frames))


def semantic(frames):
    """Event identity minus the arbitrary source ids."""
    return {
        (t, e.class_index, e.azimuth_deg, e.distance_m, e.onscreen)
        for t, frame in enumerate(frames) for e in frame
    }


class TestRules:
    def test_two_system_agreement_averages_doa(self):
        fused = ensemble([
            sys_pred("a", [ev(az=10.0, dist=1.0)]),
            sys_pred("b", [ev(az=14.0, dist=3.0)]),
        ], class_map=CLASSES)
        (got,) = fused[0]
        assert got.azimuth_deg == 12.0
        assert got.distance_m == 2.0

    def test_single_system_suppressed(self):
        fused = ensemble([
            sys_pred("a", [ev(cls=MUSIC, az=5.0)]),
            sys_pred("b", []),
        ], class_map=CLASSES)
        assert fused[0] == []

    def test_bell_single_system_survives(self):
        fused = ensemble([
            sys_pred("a", [ev(cls=BELL, az=5.0, dist=2.0)]),
            sys_pred("b", []),
        ], class_map=CLASSES)
        (got,) = fused[0]
        assert got.class_index == BELL
        assert got.azimuth_deg == 5.0
        assert got.distance_m == 2.0

    def test_far_apart_detections_do_not_agree(self):
        fused = ensemble([
            sys_pred("a", [ev(az=-30.0)]),
            sys_pred("b", [ev(az=30.0)]),
        ], class_map=CLASSES)
        assert fused[0] == []

    def test_onscreen_or(self):
        fused = ensemble([
            sys_pred("a", [ev(az=0.0, on=False)]),
            sys_pred("b", [ev(az=2.0, on=True)]),
        ], class_map=CLASSES)
        assert fused[0][0].onscreen

    def test_same_system_twice_does_not_confirm(self):
        fused = ensemble([
            sys_pred("a", [ev(az=0.0, src=0), ev(az=1.0, src=1)]),
            sys_pred("b", []),
        ], class_map=CLASSES)
        assert fused[0] == []

    def test_cap_three_per_class(self):
        frames_a = [[ev(az=a, src=i) for i, a in enumerate((-80.0, -30.0, 20.0))]
                    + [ev(az=70.0, src=3)]]
        frames_b = [[ev(az=a, src=i) for i, a in enumerate((-79.0, -29.0, 21.0))]
                    + [ev(az=71.0, src=3)]]
        fused = ensemble([sys_pred("a", *frames_a), sys_pred("b", *frames_b)],
                         class_map=CLASSES)
        assert len(fused[0]) == 3


class TestInvariants:
    def test_idempotent_on_unanimous_input(self):
        frame = [ev(az=0.1, dist=1.7, on=True), ev(cls=MUSIC, az=-41.3, dist=0.9)]
        fused = ensemble([sys_pred(s, frame) for s in "abc"], class_map=CLASSES)
        assert semantic(fused) == semantic([frame])
        for got in fused[0]:
            ref = next(e for e in frame if e.class_index == got.class_index)
            assert got.azimuth_deg == ref.azimuth_deg  # exact, not approximate
            assert got.distance_m == ref.distance_m

    def test_output_inside_member_hull(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            frames = []
            for s in range(3):
                azs = rng.uniform(-90, 90, size=rng.integers(0, 4))
                frames.append([ev(az=float(a), src=i, dist=float(rng.uniform(0.5, 3)))
                               for i, a in enumerate(azs)])
            all_az = [e.azimuth_deg for f in frames for e in f]
            fused = ensemble([sys_pred(str(s), f) for s, f in enumerate(frames)],
                             class_map=CLASSES)
            for e in fused[0]:
                assert min(all_az) <= e.azimuth_deg <= max(all_az)

    @pytest.mark.parametrize("seed", range(12))
    def test_mirror_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        systems = []
        for s in range(3):
            frames = []
            for t in range(4):
                events = [ev(frame=t, cls=int(rng.integers(0, 13)), src=i,
                             az=float(rng.uniform(-90, 90)),
                             dist=float(rng.uniform(0.5, 4)),
                             on=bool(rng.integers(2)))
                          for i in range(rng.integers(0, 5))]
                frames.append(events)
            systems.append(SystemPredictions(str(s), frames))

        mirrored_in = [
            SystemPredictions(s.system_id,
                              [augment.swap_labels(f) for f in s.frames])
            for s in systems]
        a = [augment.swap_labels(f) for f in ensemble(systems, class_map=CLASSES)]
        b = ensemble(mirrored_in, class_map=CLASSES)
        assert semantic(a) == semantic(b)


class TestValidation:
    def test_empty_systems(self):
        with pytest.raises(ValueError, match="at least one"):
            ensemble([])

    def test_misaligned_frames(self):
        with pytest.raises(ValueError, match="misaligned"):
            ensemble([sys_pred("a", []), sys_pred("b", [], [])],
                     class_map=CLASSES)

    def test_unknown_class_index(self):
        with pytest.raises(ValueError, match="unknown class"):
            ensemble([sys_pred("a", [ev(cls=99)])], class_map=CLASSES)
