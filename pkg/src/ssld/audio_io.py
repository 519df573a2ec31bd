"""Readers and writers for every on-disk format in the pipeline.

Formats:
  * WAV: RIFF, exactly 2 channels, PCM16 / PCM24 / float32, 24 kHz. Other
    sample rates are rejected, never resampled.
  * Labels: header-less CSV rows ``frame,class,source,azimuth,distance,onscreen``
    with distance in meters and onscreen in {0,1}.
  * Tensors: the "SSLD" binary container (magic, version, dims, row-major
    payload). Version 1 stores float32; version 2 stores float64 and exists so
    model checkpoints reload bit-exactly.
  * Keypoints: a JSON array of frame objects with named keypoints.

All reads raise :class:`FormatError` (a ValueError) with a message that names
the offending field; fuzzed garbage must never escape as an uncaught crash.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .types import (
    SAMPLE_RATE,
    EmbeddingFixture,
    EventRecord,
    KeypointFrame,
    StereoClip,
)


class FormatError(ValueError):
    """Malformed or out-of-contract file content."""


# ---------------------------------------------------------------------------
# WAV

_WAVE_PCM = 1
_WAVE_FLOAT = 3


def read_wav(path) -> StereoClip:
    """Read a 2-channel 24 kHz WAV file into a normalized StereoClip.

    Supports PCM16, PCM24 and float32 payloads. Integer samples are scaled by
    the full-scale negative value (32768 / 8388608) so the result lies in
    [-1, 1]; float payloads are taken verbatim.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: missing or short fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")

    code, n_channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if n_channels != 2:
        raise FormatError(f"{path}: channel count != 2 (got {n_channels})")
    if rate != SAMPLE_RATE:
        raise FormatError(
            f"{path}: sample rate {rate} != {SAMPLE_RATE} (resampling not supported)")

    if code == _WAVE_PCM and bits == 16:
        frames = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<i2")
        samples = frames.astype(np.float64) / 32768.0
    elif code == _WAVE_PCM and bits == 24:
        usable = len(data) - len(data) % 6
        raw = np.frombuffer(data[:usable], dtype=np.uint8).reshape(-1, 3)
        vals = (raw[:, 0].astype(np.int32)
                | (raw[:, 1].astype(np.int32) << 8)
                | (raw[:, 2].astype(np.int32) << 16))
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        samples = vals.astype(np.float64) / 8388608.0
    elif code == _WAVE_FLOAT and bits == 32:
        frames = np.frombuffer(data[: len(data) - len(data) % 8], dtype="<f4")
        samples = frames.astype(np.float64)
    else:
        raise FormatError(
            f"{path}: unsupported codec (format {code}, {bits}-bit); "
            "expected PCM16, PCM24 or float32")

    samples = samples.reshape(-1, 2)
    return StereoClip(
        samples_left=samples[:, 0].copy(),
        samples_right=samples[:, 1].copy(),
        sample_rate_hz=rate,
    ).validate()


def write_wav(clip: StereoClip, path) -> None:
    """Write a StereoClip as a float32 WAV. Roundtrips within 1e-7."""
    clip.validate()
    interleaved = np.empty(clip.n_samples * 2, dtype="<f4")
    interleaved[0::2] = clip.samples_left.astype("<f4")
    interleaved[1::2] = clip.samples_right.astype("<f4")
    payload = interleaved.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _WAVE_FLOAT, 2, clip.sample_rate_hz,
        clip.sample_rate_hz * 8, 8, 32,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# ---------------------------------------------------------------------------
# Label CSV

def read_labels(path, n_classes: int | None = None) -> list[EventRecord]:
    """Parse a label CSV into EventRecords sorted by (frame, class, source)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise FormatError(
                    f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                rec = EventRecord(
                    frame_index=int(parts[0]),
                    class_index=int(parts[1]),
                    source_id=int(parts[2]),
                    azimuth_deg=float(parts[3]),
                    distance_m=float(parts[4]),
                    onscreen=bool(int(parts[5])),
                )
                rec.validate(n_classes)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    records.sort(key=lambda r: (r.frame_index, r.class_index, r.source_id))
    return records


def write_labels(records: list[EventRecord], path) -> None:
    """Write EventRecords as label CSV (sorted, no header)."""
    ordered = sorted(records, key=lambda r: (r.frame_index, r.class_index, r.source_id))
    with open(path, "w", encoding="utf-8") as fh:
        for r in ordered:
            fh.write(f"{r.frame_index},{r.class_index},{r.source_id},"
                     f"{r.azimuth_deg!r},{r.distance_m!r},{int(r.onscreen)}\n")


# ---------------------------------------------------------------------------
# "SSLD" binary tensors

_MAGIC = b"SSLD"
_DTYPES = {1: "<f4", 2: "<f8"}


def tensor_to_bytes(arr: np.ndarray, dtype: str = "f4") -> bytes:
    """Serialize an array in the SSLD container layout. ``dtype`` "f4" emits
    the version-1 float32 format; "f8" emits version 2 (float64, used by
    checkpoints)."""
    if dtype not in ("f4", "f8"):
        raise ValueError(f"unsupported tensor dtype: {dtype}")
    version = 1 if dtype == "f4" else 2
    arr = np.ascontiguousarray(arr, dtype="<" + dtype)
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValueError(f"tensor rank out of range: {arr.ndim}")
    head = _MAGIC + struct.pack("<HB", version, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()


def tensor_from_bytes(blob: bytes, label: str = "<bytes>") -> np.ndarray:
    if len(blob) < 7 or blob[:4] != _MAGIC:
        raise FormatError(f"{label}: bad magic (not an SSLD tensor)")
    version, ndim = struct.unpack_from("<HB", blob, 4)
    if version not in _DTYPES:
        raise FormatError(f"{label}: unsupported SSLD version {version}")
    if len(blob) < 7 + 4 * ndim:
        raise FormatError(f"{label}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, 7)
    payload = blob[7 + 4 * ndim:]
    dt = np.dtype(_DTYPES[version])
    expected = int(np.prod(dims)) * dt.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{label}: payload size mismatch (got {len(payload)} bytes, "
            f"expected {expected} for dims {dims})")
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_tensor(arr: np.ndarray, path, dtype: str = "f4") -> None:
    """Write an array as an SSLD tensor file."""
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr, dtype))


def read_tensor(path) -> np.ndarray:
    """Read an SSLD tensor; payload dtype depends on the stored version."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return tensor_from_bytes(blob, str(path))


def write_feature_tensor(tensor, path) -> None:
    """Write a validated FeatureTensor stack as a v1 (float32) SSLD tensor."""
    tensor.validate()
    write_tensor(tensor.data, path)


def read_feature_tensor(path):
    """Read an SSLD tensor back as a FeatureTensor (expects 4 channels)."""
    from .types import FeatureTensor

    data = read_tensor(path).astype(np.float64)
    if data.ndim != 3 or data.shape[0] != 4:
        raise FormatError(
            f"{path}: expected a (4, T, F) feature stack, got {data.shape}")
    return FeatureTensor(data=data).validate()


# ---------------------------------------------------------------------------
# Keypoints

def read_keypoints(path) -> list[KeypointFrame]:
    """Read a keypoint JSON file: a list of frame objects, each
    ``{"frame": int, "persons": [{name: [u, v, conf], ...}, ...]}``."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise FormatError(f"{path}: top-level value must be a list of frames")
    frames = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "frame" not in entry:
            raise FormatError(f"{path}: frame object {i} missing 'frame' field")
        persons = []
        for j, person in enumerate(entry.get("persons", [])):
            if not isinstance(person, dict):
                raise FormatError(f"{path}: frame {i} person {j} is not an object")
            kp = {}
            for name, val in person.items():
                if val is None:
                    continue
                if not isinstance(val, (list, tuple)) or len(val) != 3:
                    raise FormatError(
                        f"{path}: frame {i} keypoint {name!r} must be [u, v, conf]")
                kp[name] = (float(val[0]), float(val[1]), float(val[2]))
            persons.append(kp)
        try:
            frame = KeypointFrame(frame_index=int(entry["frame"]), persons=persons)
            frame.validate()
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: frame object {i}: {exc}") from exc
        frames.append(frame)
    frames.sort(key=lambda f: f.frame_index)
    return frames


def write_keypoints(frames: list[KeypointFrame], path) -> None:
    doc = [
        {
            "frame": f.frame_index,
            "persons": [{k: list(v) for k, v in person.items()} for person in f.persons],
        }
        for f in frames
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Embedding fixtures

def read_fixture(path, modality_tag: str) -> EmbeddingFixture:
    """Load an embedding fixture stored as an SSLD tensor."""
    tokens = read_tensor(path).astype(np.float64)
    if tokens.ndim != 2:
        raise FormatError(f"{path}: fixture tensor must be 2-d, got {tokens.shape}")
    fixture = EmbeddingFixture(tokens=tokens, modality_tag=modality_tag,
                               d_k=tokens.shape[1])
    try:
        fixture.validate()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return fixture


def write_fixture(fixture: EmbeddingFixture, path) -> None:
    fixture.validate()
    write_tensor(fixture.tokens, path, dtype="f8")
