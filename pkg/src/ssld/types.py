"""Shared domain types for the stereo SELD pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

SAMPLE_RATE = 24000
LABEL_FPS = 10
N_TRACKS = 3

#: Keypoint names a person record may carry.
KEYPOINT_NAMES = ("nose", "wrist_left", "wrist_right", "ankle_left", "ankle_right")


@dataclass
class StereoClip:
    """Two-channel audio at 24 kHz, samples in [-1, 1]."""

    samples_left: np.ndarray
    samples_right: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    clip_id: str = ""

    def __post_init__(self):
        self.samples_left = np.asarray(self.samples_left, dtype=np.float64)
        self.samples_right = np.asarray(self.samples_right, dtype=np.float64)

    def validate(self):
        if self.samples_left.shape != self.samples_right.shape:
            raise ValueError(
                "channel length mismatch: "
                f"{self.samples_left.shape} vs {self.samples_right.shape}")
        if self.samples_left.ndim != 1:
            raise ValueError("channels must be 1-d sample arrays")
        if not (np.isfinite(self.samples_left).all()
                and np.isfinite(self.samples_right).all()):
            raise ValueError("non-finite sample")
        return self

    @property
    def n_samples(self) -> int:
        return self.samples_left.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class EventRecord:
    """One active sound event in one 100 ms label frame."""

    frame_index: int
    class_index: int
    source_id: int
    azimuth_deg: float
    distance_m: float
    onscreen: bool

    def validate(self, n_classes: int | None = None):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.source_id < 0:
            raise ValueError(f"source_id must be >= 0, got {self.source_id}")
        if not -90.0 <= self.azimuth_deg <= 90.0:
            raise ValueError(f"azimuth out of range [-90, 90]: {self.azimuth_deg}")
        if not self.distance_m > 0:
            raise ValueError(f"distance must be > 0, got {self.distance_m}")
        if n_classes is not None and not 0 <= self.class_index < n_classes:
            raise ValueError(
                f"class index {self.class_index} outside [0, {n_classes})")
        return self


@dataclass
class EmbeddingFixture:
    """Frozen stand-in for a pretrained encoder output: tokens of shape
    (n_tokens, width). Audio fixtures carry 1 token, visual ones 577."""

    tokens: np.ndarray
    modality_tag: str  # "clap_audio" | "owlvit_visual"
    d_k: int = 512

    EXPECTED_TOKENS = {"clap_audio": 1, "owlvit_visual": 577}

    def validate(self):
        if self.modality_tag not in self.EXPECTED_TOKENS:
            raise ValueError(f"unknown modality tag: {self.modality_tag!r}")
        want = self.EXPECTED_TOKENS[self.modality_tag]
        if self.tokens.ndim != 2 or self.tokens.shape[0] != want:
            raise ValueError(
                f"{self.modality_tag} fixture must have {want} tokens, "
                f"got shape {self.tokens.shape}")
        if self.tokens.shape[1] != self.d_k:
            raise ValueError(
                f"token width {self.tokens.shape[1]} != d_k {self.d_k}")
        if not np.isfinite(self.tokens).all():
            raise ValueError("non-finite fixture values")
        return self


@dataclass
class KeypointFrame:
    """Detected person keypoints for one frame. ``persons`` maps keypoint
    names to (u, v, confidence) with u, v normalized to [0, 1]; missing
    keypoints are simply absent from the dict."""

    frame_index: int
    persons: list[dict[str, tuple[float, float, float]]] = field(default_factory=list)

    def validate(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        for person in self.persons:
            for name, (u, v, conf) in person.items():
                if name not in KEYPOINT_NAMES:
                    raise ValueError(f"unknown keypoint name: {name!r}")
                if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                    raise ValueError(
                        f"keypoint {name} outside unit square: ({u}, {v})")
                if not 0.0 <= conf <= 1.0:
                    raise ValueError(f"keypoint {name} confidence out of range: {conf}")
        return self


@dataclass
class FeatureTensor:
    """Stacked acoustic input features, shape (4, T, 64)."""

    data: np.ndarray
    channel_names: tuple[str, ...] = ("mel_left", "mel_right", "ild", "stpacc")
    frame_hop_samples: int = 150
    sample_rate_hz: int = SAMPLE_RATE

    def validate(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(self.channel_names):
            raise ValueError(f"feature tensor must be (C, T, F), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("non-finite feature values")
        return self


@dataclass
class ClassMap:
    """Ordered class labels plus the per-class rules the post-processing and
    ensembling stages need."""

    names: list[str]
    bell_index: int
    knock_index: int
    keypoint_classes: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.names)
        if len(set(self.names)) != n:
            raise ValueError("duplicate class names")
        for idx in (self.bell_index, self.knock_index):
            if not 0 <= idx < n:
                raise ValueError(f"class index {idx} outside [0, {n})")
        for idx, rule in self.keypoint_classes.items():
            if not 0 <= idx < n:
                raise ValueError(f"keypoint class index {idx} outside [0, {n})")
            if rule not in ("nose", "wrists", "ankles"):
                raise ValueError(f"unknown keypoint rule: {rule!r}")

    @property
    def n_classes(self) -> int:
        return len(self.names)

    @property
    def single_system_classes(self) -> frozenset[int]:
        return frozenset((self.bell_index, self.knock_index))

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassMap":
        names = list(d["names"])
        kp = {names.index(k): v for k, v in d.get("keypoint_classes", {}).items()}
        return cls(
            names=names,
            bell_index=names.index(d["bell"]),
            knock_index=names.index(d["knock"]),
            keypoint_classes=kp,
        )

    @classmethod
    def load(cls, path) -> "ClassMap":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_class_map() -> ClassMap:
    """The 13-class map shipped with the package."""
    text = resources.files("ssld.data").joinpath("classes.json").read_text("utf-8")
    return ClassMap.from_dict(json.loads(text))
