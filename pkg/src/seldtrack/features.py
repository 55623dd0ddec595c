"""B-format features: log-mel spectrograms and the mel-space intensity vector.

The 7 input channels fed to the network are the 4 log-mel maps of (w,x,y,z)
plus the 3 Cartesian components of the per-bin-normalized acoustic intensity
Re{W* . (X,Y,Z)}, projected through the mel filterbank and negated. The 1/(rho0*c)
factor of the physical intensity cancels under the per-bin normalization and
is dropped.

The same intensity field, energy-averaged per frame *before* the minus sign,
doubles as an analytic DoA estimator (``doa_from_intensity``): with the
encoding convention of :mod:`seldtrack.scenes` the intensity of a plane wave
points exactly at the source, which is what the acceptance oracle relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import angles_from_vectors
from .scenes import FoaClip

WINDOW_LEN = 1024
HOP = 480
LOG_FLOOR = 1e-10
NORM_EPS = 1e-10


def hann_window(n: int = WINDOW_LEN) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram4:
    """Complex STFTs of the four B-format channels, shape (4, F, T)."""

    values: np.ndarray
    sample_rate_hz: int
    window_len: int = WINDOW_LEN
    hop: int = HOP

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


def n_stft_frames(n_samples: int, window_len: int = WINDOW_LEN, hop: int = HOP) -> int:
    return (n_samples - window_len) // hop + 1


def _frame(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)
    return frames[..., ::hop, :]


def stft_clip(clip: FoaClip, window_len: int = WINDOW_LEN, hop: int = HOP, method: str = "fft") -> Spectrogram4:
    """Hann-windowed STFT of all 4 channels; no centering, first frame at
    sample 0. ``method`` picks the FFT path or the equivalent fixed 1-D
    convolution (a dense DFT matmul); the two agree to ~1e-12 relative.
    """
    if clip.n_samples < window_len:
        raise ValidationError(
            f"clip of {clip.n_samples} samples is shorter than the {window_len}-point window"
        )
    window = hann_window(window_len)
    frames = _frame(clip.samples, window_len, hop) * window  # (4, T, win)
    if method == "fft":
        spec = np.fft.rfft(frames, axis=-1)
    elif method == "conv":
        n_bins = window_len // 2 + 1
        k = np.arange(n_bins)[:, None] * np.arange(window_len)[None, :]
        basis = np.exp(-2j * np.pi * k / window_len)  # (F, win) fixed conv kernels
        spec = frames @ basis.T
    else:
        raise ValidationError(f"unknown STFT method {method!r}")
    return Spectrogram4(spec.transpose(0, 2, 1), clip.sample_rate_hz, window_len, hop)


# ---------------------------------------------------------------------------
# Mel filterbank
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass
class MelFilterbank:
    """Triangular mel filters, rows normalized to unit sum; shape (K, F)."""

    weights: np.ndarray
    sample_rate_hz: int
    f_min_hz: float
    f_max_hz: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def build(
        cls,
        sample_rate_hz: int,
        n_mels: int = 64,
        window_len: int = WINDOW_LEN,
        f_min_hz: float = 50.0,
        f_max_hz: float | None = None,
    ) -> "MelFilterbank":
        if f_max_hz is None:
            f_max_hz = sample_rate_hz / 2
        n_bins = window_len // 2 + 1
        fft_freqs = np.arange(n_bins) * sample_rate_hz / window_len
        mel_pts = np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2)
        hz_pts = mel_to_hz(mel_pts)
        weights = np.zeros((n_mels, n_bins))
        for k in range(n_mels):
            lo, mid, hi = hz_pts[k : k + 3]
            rising = (fft_freqs - lo) / max(mid - lo, 1e-9)
            falling = (hi - fft_freqs) / max(hi - mid, 1e-9)
            weights[k] = np.maximum(0.0, np.minimum(rising, falling))
        sums = weights.sum(axis=1)
        if np.any(sums <= 0):
            raise ValidationError(
                "mel filterbank has empty rows; increase window length or reduce n_mels"
            )
        return cls(weights / sums[:, None], sample_rate_hz, f_min_hz, float(f_max_hz))


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------

def logmel(spec: Spectrogram4, fb: MelFilterbank, floor: float = LOG_FLOOR) -> np.ndarray:
    """log(H_mel . |S|^2 + floor) for each channel; output (4, T, K)."""
    if fb.n_bins != spec.n_bins:
        raise ValidationError(f"filterbank has {fb.n_bins} bins, spectrogram {spec.n_bins}")
    power = np.abs(spec.values) ** 2  # (4, F, T)
    mel = np.einsum("kf,cft->ctk", fb.weights, power)
    return np.log(mel + floor)


def bin_intensity(spec: Spectrogram4, eps: float = NORM_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin acoustic intensity before the mel projection and minus sign.

    Returns (unit vectors (3, F, T), magnitudes (F, T)); bins below the eps
    floor get zero vectors.
    """
    w = spec.values[0]
    iv = np.real(np.conj(w)[None, :, :] * spec.values[1:])  # (3, F, T)
    mag = np.sqrt(np.sum(iv**2, axis=0))
    return iv / (mag[None] + eps), mag


def intensity_vector(spec: Spectrogram4, fb: MelFilterbank, eps: float = NORM_EPS) -> np.ndarray:
    """Mel-space normalized intensity feature with its leading minus sign;
    output (3, T, K)."""
    if fb.n_bins != spec.n_bins:
        raise ValidationError(f"filterbank has {fb.n_bins} bins, spectrogram {spec.n_bins}")
    unit, _ = bin_intensity(spec, eps)
    return -np.einsum("kf,cft->ctk", fb.weights, unit)


@dataclass
class DoaEstimate:
    """Frame-wise analytic DoA from intensity: angles, validity, coherence.

    ``confidence`` is the norm of the energy-weighted mean of the unit bin
    vectors (1 for a lone plane wave, near 0 for isotropic noise); ``valid``
    is False where a frame carries no intensity at all.
    """

    azimuth: np.ndarray
    elevation: np.ndarray
    valid: np.ndarray
    confidence: np.ndarray


def doa_from_intensity(spec: Spectrogram4, eps: float = NORM_EPS) -> DoaEstimate:
    """Energy-weighted mean intensity direction per frame (pre-minus vectors,
    so the result points at the source under the package encoding)."""
    unit, mag = bin_intensity(spec, eps)
    total = mag.sum(axis=0)  # (T,)
    mean_vec = (unit * mag[None]).sum(axis=1) / (total[None] + eps)  # (3, T)
    valid = total > spec.n_bins * eps
    confidence = np.where(valid, np.sqrt(np.sum(mean_vec**2, axis=0)), 0.0)
    az, el = angles_from_vectors(np.moveaxis(mean_vec, 0, -1))
    az = np.where(valid, az, 0.0)
    el = np.where(valid, el, 0.0)
    return DoaEstimate(az, el, valid, confidence)


# ---------------------------------------------------------------------------
# Stacked feature tensor
# ---------------------------------------------------------------------------

@dataclass
class FeatureTensor:
    """Stacked network input, shape (7, T_stft, K): 4 log-mel + 3 intensity."""

    channels: np.ndarray
    sample_rate_hz: int
    hop: int
    n_mels: int

    @property
    def n_frames(self) -> int:
        return self.channels.shape[1]


def extract_features(clip: FoaClip, fb: MelFilterbank | None = None, n_mels: int = 64) -> FeatureTensor:
    if fb is None:
        fb = MelFilterbank.build(clip.sample_rate_hz, n_mels=n_mels)
    spec = stft_clip(clip)
    stack = np.concatenate([logmel(spec, fb), intensity_vector(spec, fb)], axis=0)
    return FeatureTensor(stack, clip.sample_rate_hz, HOP, fb.n_mels)


_DUMP_HEADER = struct.Struct("<II")  # (T, K); channel count fixed at 7


def write_feature_dump(features: FeatureTensor, path) -> None:
    """Debug dump: 8-byte (T, K) header + little-endian f32 payload of (7,T,K)."""
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(features.n_frames, features.n_mels))
        fh.write(np.ascontiguousarray(features.channels, dtype="<f4").tobytes())


def read_feature_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        t, k = _DUMP_HEADER.unpack(fh.read(_DUMP_HEADER.size))
        payload = np.frombuffer(fh.read(), dtype="<f4")
    if payload.size != 7 * t * k:
        raise ValidationError(f"{path}: payload size does not match header ({t}x{k})")
    return payload.reshape(7, t, k).astype(np.float64)
