"""Acoustic input features: per-channel log-mels, level-difference, and the
frame-wise autocorrelation channel used for distance cues.

A 5 s clip at 24 kHz maps to exactly 800 frames of 64 bins in every channel
(hop 150, frame count truncated to ``len // hop``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .types import SAMPLE_RATE, FeatureTensor, StereoClip

EPS = 1e-8
#: Silence guard for the autocorrelation normalization: frames whose lag-0
#: power is at or below this are emitted as all-zero rows.
ACC_SILENCE_EPS = 1e-12

AC_WINDOW_LEN = 1014
AC_FFT_LEN = 2048
AC_N_LAGS = 512
AC_POOL = 8


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 512
    fft_len: int = 512
    hop: int = 150

    def __post_init__(self):
        if self.window_len > self.fft_len:
            raise ValueError(
                f"window_len {self.window_len} > fft_len {self.fft_len}")
        if self.hop <= 0:
            raise ValueError(f"hop must be > 0, got {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class MelBank:
    """Triangular mel filter bank (HTK mel scale), rows ordered by center
    frequency."""

    n_mels: int = 64
    n_fft: int = 512
    sample_rate_hz: int = SAMPLE_RATE
    f_min: float = 0.0
    f_max: float = 12000.0
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = _mel_weights(
            self.n_mels, self.n_fft, self.sample_rate_hz, self.f_min, self.f_max)

    def project(self, power: np.ndarray) -> np.ndarray:
        """Apply the bank to a (T, n_fft/2+1) power matrix -> (T, n_mels)."""
        if power.shape[-1] != self.weights.shape[1]:
            raise ValueError(
                f"power has {power.shape[-1]} bins, bank expects "
                f"{self.weights.shape[1]}")
        return power @ self.weights.T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_weights(n_mels, n_fft, sr, f_min, f_max):
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_hz = np.linspace(0.0, sr / 2.0, n_fft // 2 + 1)
    lower, center, upper = edges_hz[:-2], edges_hz[1:-1], edges_hz[2:]
    up = (bin_hz[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - bin_hz[None, :]) / (upper - center)[:, None]
    w = np.maximum(0.0, np.minimum(up, down))
    if not (w.max(axis=1) > 0).all():
        raise ValueError("mel bank has an empty filter; increase n_fft or f_max")
    return w


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Centered framing with reflect padding of window_len/2 on both sides.

    Returns (len(x) // hop, window_len); frame t covers the samples around
    t * hop. The result is a strided view; callers must not write to it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    if not np.isfinite(x).all():
        raise ValueError("non-finite sample")
    pad = window_len // 2
    if x.size <= pad:
        raise ValueError(
            f"input too short: {x.size} samples < half window {pad}")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = x.size // hop
    view = np.lib.stride_tricks.sliding_window_view(xp, window_len)
    return view[: hop * n_frames:hop]


def stft(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Windowed STFT of one channel -> complex (T, fft_len/2 + 1)."""
    frames = frame_signal(x, cfg.window_len, cfg.hop) * hann(cfg.window_len)
    return np.fft.rfft(frames, n=cfg.fft_len, axis=1)


def _power_spectrum(spec: np.ndarray) -> np.ndarray:
    """|spec|^2 via a float view: much cheaper than touching the strided
    .real/.imag attributes of a big complex array."""
    sq = np.square(spec.view(np.float64))
    return sq[:, 0::2] + sq[:, 1::2]


def log_mel(stft_mag_sq: np.ndarray, mel: MelBank) -> np.ndarray:
    """log(mel power + eps) of a (T, n_bins) power spectrogram."""
    if (stft_mag_sq < 0).any():
        raise ValueError("power spectrogram must be non-negative")
    return np.log(mel.project(stft_mag_sq) + EPS)


def ild(stft_left: np.ndarray, stft_right: np.ndarray, mel: MelBank) -> np.ndarray:
    """Log ratio of mel-projected channel powers.

    eps is added per linear bin before the mel projection, and the ratio is
    evaluated as a difference of logs so that swapping the inputs negates the
    result bit-for-bit.
    """
    if stft_left.shape != stft_right.shape:
        raise ValueError(
            f"shape mismatch: left {stft_left.shape} vs right {stft_right.shape}")
    return _ild_from_power(np.abs(stft_left) ** 2, np.abs(stft_right) ** 2, mel)


def _ild_from_power(pow_left, pow_right, mel):
    num = mel.project(pow_left + EPS)
    den = mel.project(pow_right + EPS)
    return np.log(num) - np.log(den)


def stpacc(clip: StereoClip, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Short-term normalized autocorrelation, pooled to 64 lag bins.

    The mono downmix (L+R)/2 is framed with a 1014-point Hann window at the
    configured hop (so frame counts line up with the mel features); each
    frame is zero-padded to 2048 so the FFT-squared route yields the *linear*
    (biased) autocorrelation; lags 0..511 cover ~21 ms at 24 kHz. Each row is
    normalized by its lag-0 value (all zero when the frame is silent) and
    groups of 8 consecutive lags are mean-pooled.
    """
    clip.validate()
    mono = (clip.samples_left + clip.samples_right) / 2.0
    frames = frame_signal(mono, AC_WINDOW_LEN, cfg.hop)
    window = hann(AC_WINDOW_LEN)
    n_frames = frames.shape[0]
    out = np.empty((n_frames, AC_N_LAGS // AC_POOL))
    # chunked, with transform buffers reused, so each batch stays cache-warm
    chunk_rows = 2048
    padded = np.zeros((chunk_rows, AC_FFT_LEN))
    spec = np.empty((chunk_rows, AC_FFT_LEN // 2 + 1), dtype=np.complex128)
    for start in range(0, n_frames, chunk_rows):
        m = min(chunk_rows, n_frames - start)
        np.multiply(frames[start:start + m], window, out=padded[:m, :AC_WINDOW_LEN])
        np.fft.rfft(padded[:m], axis=1, out=spec[:m])
        power = _power_spectrum(spec[:m])
        # the power spectrum is real and even, so the inverse transform back
        # to lag domain is a type-I DCT (much cheaper than a complex irfft)
        r = scipy.fft.dct(power, type=1, axis=1, overwrite_x=True)[:, :AC_N_LAGS]
        r /= AC_FFT_LEN
        r0 = r[:, 0].copy()
        np.divide(r, np.maximum(r0[:, None], ACC_SILENCE_EPS), out=r)
        r[r0 <= ACC_SILENCE_EPS] = 0.0
        out[start:start + m] = r.reshape(-1, AC_N_LAGS // AC_POOL,
                                         AC_POOL).mean(axis=2)
    return out


def extract_features(clip: StereoClip, cfg: StftConfig = StftConfig(),
                     mel: MelBank | None = None) -> FeatureTensor:
    """Stack mel_left, mel_right, ild and stpacc into a (4, T, 64) tensor."""
    clip.validate()
    if clip.sample_rate_hz != SAMPLE_RATE:
        raise ValueError(
            f"sample rate {clip.sample_rate_hz} != {SAMPLE_RATE}")
    if mel is None:
        mel = MelBank(n_fft=cfg.fft_len, sample_rate_hz=clip.sample_rate_hz)
    spec_l = stft(clip.samples_left, cfg)
    spec_r = stft(clip.samples_right, cfg)
    pow_l = _power_spectrum(spec_l)
    pow_r = _power_spectrum(spec_r)
    data = np.stack([
        log_mel(pow_l, mel),
        log_mel(pow_r, mel),
        _ild_from_power(pow_l, pow_r, mel),
        stpacc(clip, cfg),
    ])
    return FeatureTensor(data=data, frame_hop_samples=cfg.hop,
                         sample_rate_hz=clip.sample_rate_hz).validate()
