"""Synthetic anechoic Ambisonic scenes with analytic ground truth.

Events are plane waves carrying class-banded source signals (band-limited
noise or amplitude-modulated tones), encoded into first-order B-format with
the real first-order pattern and unit omni gain:

    w = s
    x = cos(el) cos(az) * s
    y = cos(el) sin(az) * s
    z = sin(el) * s

Trajectories are piecewise linear, resampled once per label hop (100 ms);
within a hop the direction is constant. Labels, audio, and event metadata are
all derived from the same event list, so every downstream test has exact
ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geometry import DoaAngle, angular_distance, lerp_angles

SILENCE = -1
DEFAULT_SAMPLE_RATE = 24000
LABEL_HOP_S = 0.1

SIGNAL_KINDS = ("band_noise", "am_tone")


@dataclass
class FoaClip:
    """4-channel time-domain B-format signal, channel order (w, x, y, z)."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 4:
            raise ValidationError(f"FoaClip needs shape (4, L), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("FoaClip contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass
class LabelGrid:
    """Frame-by-track ground truth (or predictions) at the label rate.

    Inactive slots carry class ``SILENCE`` and a zero DoA. Two active slots in
    the same frame may share a class: same-class overlap is a legal state and
    the reason tracks exist at all.
    """

    active: np.ndarray      # (T, n_track) bool
    class_id: np.ndarray    # (T, n_track) int, SILENCE where inactive
    azimuth: np.ndarray     # (T, n_track) float, radians
    elevation: np.ndarray   # (T, n_track) float, radians
    label_hop_s: float = LABEL_HOP_S

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        self.class_id = np.asarray(self.class_id, dtype=np.int64)
        self.azimuth = np.asarray(self.azimuth, dtype=np.float64)
        self.elevation = np.asarray(self.elevation, dtype=np.float64)
        shapes = {a.shape for a in (self.active, self.class_id, self.azimuth, self.elevation)}
        if len(shapes) != 1 or self.active.ndim != 2:
            raise ValidationError(f"inconsistent LabelGrid arrays: {shapes}")
        if np.any(self.class_id[~self.active] != SILENCE):
            raise ValidationError("inactive LabelGrid entries must carry class SILENCE")
        if np.any(self.class_id[self.active] < 0):
            raise ValidationError("active LabelGrid entries must carry a valid class")

    @classmethod
    def silent(cls, n_frames: int, n_track: int = 2, label_hop_s: float = LABEL_HOP_S) -> "LabelGrid":
        return cls(
            active=np.zeros((n_frames, n_track), dtype=bool),
            class_id=np.full((n_frames, n_track), SILENCE, dtype=np.int64),
            azimuth=np.zeros((n_frames, n_track)),
            elevation=np.zeros((n_frames, n_track)),
            label_hop_s=label_hop_s,
        )

    @property
    def n_frames(self) -> int:
        return self.active.shape[0]

    @property
    def n_track(self) -> int:
        return self.active.shape[1]

    def frame_entries(self, t: int) -> list[tuple[int, int, DoaAngle]]:
        """Active (track, class, DoA) triples of frame ``t``."""
        out = []
        for n in np.flatnonzero(self.active[t]):
            out.append((int(n), int(self.class_id[t, n]), DoaAngle(self.azimuth[t, n], self.elevation[t, n])))
        return out

    def equals(self, other: "LabelGrid") -> bool:
        return (
            self.active.shape == other.active.shape
            and np.array_equal(self.active, other.active)
            and np.array_equal(self.class_id, other.class_id)
            and np.array_equal(self.azimuth, other.azimuth)
            and np.array_equal(self.elevation, other.elevation)
        )


def event_frame_span(onset_s: float, offset_s: float, label_hop_s: float = LABEL_HOP_S) -> tuple[int, int]:
    """Label frames [first, last) occupied by an event.

    first = floor(onset/hop), last = ceil(offset/hop); for grid-aligned onsets
    this is exactly ceil(duration/hop) frames, and in general the first frame
    covers the onset sample within one hop.
    """
    first = int(math.floor(onset_s / label_hop_s + 1e-9))
    last = int(math.ceil(offset_s / label_hop_s - 1e-9))
    return first, max(last, first + 1)


@dataclass
class SceneEvent:
    """One sound event: class, time span, sampled DoA trajectory, source signal.

    ``trajectory`` holds one DoA per occupied label frame (piecewise-linear
    paths are sampled by the constructors below).
    """

    class_id: int
    onset_s: float
    offset_s: float
    trajectory: list[DoaAngle]
    signal_kind: str = "band_noise"
    amplitude: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"negative class id {self.class_id}")
        if not (self.onset_s < self.offset_s):
            raise ValidationError(
                f"event must have positive duration, got [{self.onset_s}, {self.offset_s}]"
            )
        if self.signal_kind not in SIGNAL_KINDS:
            raise ValidationError(f"unknown signal kind {self.signal_kind!r}")
        first, last = self.frame_span()
        if len(self.trajectory) != last - first:
            raise ValidationError(
                f"trajectory has {len(self.trajectory)} samples but the event spans "
                f"{last - first} label frames"
            )

    def frame_span(self, label_hop_s: float = LABEL_HOP_S) -> tuple[int, int]:
        return event_frame_span(self.onset_s, self.offset_s, label_hop_s)

    @classmethod
    def static(cls, class_id, onset_s, offset_s, doa: DoaAngle, **kw) -> "SceneEvent":
        first, last = event_frame_span(onset_s, offset_s)
        return cls(class_id, onset_s, offset_s, [doa] * (last - first), **kw)

    @classmethod
    def moving(cls, class_id, onset_s, offset_s, start: DoaAngle, end: DoaAngle, **kw) -> "SceneEvent":
        """Linear sweep from ``start`` to ``end`` over the event duration,
        sampled at each occupied frame's start time (clamped into the event)."""
        first, last = event_frame_span(onset_s, offset_s)
        duration = offset_s - onset_s
        traj = []
        for i in range(first, last):
            t = min(max(i * LABEL_HOP_S, onset_s), offset_s)
            traj.append(lerp_angles(start, end, (t - onset_s) / duration))
        return cls(class_id, onset_s, offset_s, traj, **kw)


# ---------------------------------------------------------------------------
# Source signals
# ---------------------------------------------------------------------------

def class_band_hz(class_id: int, n_classes: int, sample_rate_hz: int) -> tuple[float, float]:
    """Frequency band owned by a class: log-spaced slices of [300 Hz, 0.8*Nyquist]
    with 10% guard gaps, so classes are separable from spectra at toy scale."""
    if not 0 <= class_id < n_classes:
        raise ValidationError(f"class id {class_id} outside [0, {n_classes})")
    lo, hi = 300.0, 0.8 * sample_rate_hz / 2
    edges = np.geomspace(lo, hi, n_classes + 1)
    width = edges[class_id + 1] - edges[class_id]
    return float(edges[class_id] + 0.05 * width), float(edges[class_id + 1] - 0.05 * width)


def render_source_signal(
    event: SceneEvent, n_classes: int, sample_rate_hz: int, rng: np.random.Generator
) -> np.ndarray:
    """Mono source signal for the event's duration, RMS-normalized, with 5 ms
    raised-cosine onset/offset ramps."""
    n = int(round((event.offset_s - event.onset_s) * sample_rate_hz))
    f_lo, f_hi = class_band_hz(event.class_id, n_classes, sample_rate_hz)
    if event.signal_kind == "band_noise":
        white = rng.standard_normal(n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
        spectrum[(freqs < f_lo) | (freqs > f_hi)] = 0.0
        sig = np.fft.irfft(spectrum, n)
    else:  # am_tone
        carrier_hz = math.sqrt(f_lo * f_hi)
        mod_hz = rng.uniform(2.0, 8.0)
        t = np.arange(n) / sample_rate_hz
        phase = rng.uniform(0.0, 2 * math.pi)
        sig = (1.0 + 0.5 * np.sin(2 * math.pi * mod_hz * t)) * np.sin(
            2 * math.pi * carrier_hz * t + phase
        )
    rms = float(np.sqrt(np.mean(sig**2)))
    sig = sig / max(rms, 1e-12) * 0.2 * event.amplitude
    ramp = min(int(0.005 * sample_rate_hz), n // 2)
    if ramp > 0:
        win = 0.5 * (1 - np.cos(np.linspace(0.0, math.pi, ramp)))
        sig[:ramp] *= win
        sig[-ramp:] *= win[::-1]
    return sig


# ---------------------------------------------------------------------------
# Encoding and scene rendering
# ---------------------------------------------------------------------------

def encode_plane_wave(signal: np.ndarray, doa: DoaAngle, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FoaClip:
    """Encode a mono signal as a plane wave from ``doa`` into B-format."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValidationError(f"expected a mono signal, got shape {signal.shape}")
    if not np.all(np.isfinite(signal)):
        bad = int(np.flatnonzero(~np.isfinite(signal))[0])
        raise ValidationError(f"non-finite sample at index {bad}")
    gains = np.concatenate([[1.0], doa.to_vector()])
    return FoaClip(gains[:, None] * signal[None, :], sample_rate_hz)


def synth_scene(
    events: list[SceneEvent],
    clip_len_s: float,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
    noise_snr_db: float | None = None,
    rng_seed: int = 0,
    n_track: int = 2,
    label_hop_s: float = LABEL_HOP_S,
    n_classes: int | None = None,
) -> tuple[FoaClip, LabelGrid]:
    """Render events into one clip: summed per-event plane waves plus optional
    isotropic Gaussian noise at ``noise_snr_db`` (None or inf = clean).

    ``n_classes`` fixes the class-band table; leave None only for throwaway
    scenes (it then defaults to the largest class present plus one), since the
    bands must be dataset-wide for class spectra to be consistent.

    Events are assigned to tracks in onset order; more than ``n_track``
    simultaneous events is an error. Identical seeds give identical bytes.
    """
    n_samples = int(round(clip_len_s * sample_rate_hz))
    n_frames = int(round(clip_len_s / label_hop_s))
    block = int(round(label_hop_s * sample_rate_hz))
    grid = LabelGrid.silent(n_frames, n_track, label_hop_s)
    audio = np.zeros((4, n_samples))

    for ev in events:
        if ev.offset_s > clip_len_s + 1e-9:
            raise ValidationError(f"event ends at {ev.offset_s}s, past the {clip_len_s}s clip")

    # track assignment in onset order; an event keeps one track for its life
    order = sorted(range(len(events)), key=lambda i: (events[i].onset_s, i))
    occupied = np.zeros((n_frames, n_track), dtype=bool)
    assignment: dict[int, int] = {}
    for i in order:
        first, last = events[i].frame_span(label_hop_s)
        last = min(last, n_frames)
        free = np.flatnonzero(~occupied[first:last].any(axis=0))
        if free.size == 0:
            raise ValidationError(
                f"more than {n_track} events overlap around {first * label_hop_s:.1f}s"
            )
        assignment[i] = int(free[0])
        occupied[first:last, free[0]] = True

    if n_classes is None:
        n_classes = _max_class(events) + 1
    seeds = np.random.SeedSequence(rng_seed).spawn(len(events) + 1)
    for i, ev in enumerate(events):
        sig = render_source_signal(ev, n_classes, sample_rate_hz, np.random.default_rng(seeds[i]))
        onset_sample = int(round(ev.onset_s * sample_rate_hz))
        first, last = ev.frame_span(label_hop_s)
        track = assignment[i]
        for k, frame in enumerate(range(first, min(last, n_frames))):
            doa = ev.trajectory[k]
            start = max(frame * block, onset_sample)
            stop = min((frame + 1) * block, onset_sample + sig.size, n_samples)
            if stop <= start:
                continue
            seg = sig[start - onset_sample : stop - onset_sample]
            gains = np.concatenate([[1.0], doa.to_vector()])
            audio[:, start:stop] += gains[:, None] * seg[None, :]
            grid.active[frame, track] = True
            grid.class_id[frame, track] = ev.class_id
            grid.azimuth[frame, track] = doa.azimuth
            grid.elevation[frame, track] = doa.elevation

    if noise_snr_db is not None and math.isfinite(noise_snr_db):
        rng = np.random.default_rng(seeds[-1])
        p_sig = float(np.mean(audio[0] ** 2))
        sigma = math.sqrt(max(p_sig, 1e-12) / 10 ** (noise_snr_db / 10))
        audio[0] += sigma * rng.standard_normal(n_samples)
        audio[1:] += sigma / math.sqrt(3.0) * rng.standard_normal((3, n_samples))

    peak = float(np.max(np.abs(audio), initial=0.0))
    if peak > 1.0:
        audio /= peak
    return FoaClip(audio, sample_rate_hz), grid


def _max_class(events: list[SceneEvent]) -> int:
    return max((ev.class_id for ev in events), default=0)


# ---------------------------------------------------------------------------
# Random scenes and dataset presets
# ---------------------------------------------------------------------------

def _random_doa(rng: np.random.Generator, el_limit_deg: float = 80.0) -> DoaAngle:
    """Random direction with integer-degree angles (exact CSV round trips)."""
    az = int(rng.integers(-180, 180))
    el = int(rng.integers(-el_limit_deg, el_limit_deg + 1))
    return DoaAngle.from_degrees(az, el)


def _separated_doa(rng: np.random.Generator, other: DoaAngle, min_separation_deg: float) -> DoaAngle:
    for _ in range(1000):
        cand = _random_doa(rng)
        if angular_distance(cand, other) >= min_separation_deg:
            return cand
    raise RuntimeError("could not draw a separated DoA")


def random_scene_events(
    rng: np.random.Generator,
    n_classes: int,
    clip_len_s: float,
    kind: str,
    min_separation_deg: float = 60.0,
    moving: bool = False,
) -> list[SceneEvent]:
    """Event list for one clip. ``kind`` is one of ``single``, ``two_diff``,
    ``two_same`` (fully-overlapping same-class pair, >= min_separation apart).

    Onsets/offsets snap to the label grid so label bookkeeping is exact.
    """
    hop = LABEL_HOP_S
    n_frames = int(round(clip_len_s / hop))

    def span(min_frames=8):
        length = int(rng.integers(min_frames, max(min_frames + 1, n_frames - 4)))
        start = int(rng.integers(0, n_frames - length + 1))
        return start * hop, (start + length) * hop

    def make(class_id, onset, offset, doa, doa_end=None):
        kind_sig = str(rng.choice(SIGNAL_KINDS))
        amp = float(rng.uniform(0.6, 1.0))
        if doa_end is not None:
            return SceneEvent.moving(class_id, onset, offset, doa, doa_end,
                                     signal_kind=kind_sig, amplitude=amp)
        return SceneEvent.static(class_id, onset, offset, doa,
                                 signal_kind=kind_sig, amplitude=amp)

    if kind == "single":
        onset, offset = span()
        doa = _random_doa(rng)
        end = _separated_doa(rng, doa, 20.0) if moving else None
        return [make(int(rng.integers(n_classes)), onset, offset, doa, end)]
    if kind in ("two_diff", "two_same"):
        onset, offset = span(min_frames=12)
        if kind == "two_same":
            c1 = c2 = int(rng.integers(n_classes))
        else:
            c1 = int(rng.integers(n_classes))
            c2 = int((c1 + 1 + rng.integers(n_classes - 1)) % n_classes)
        d1 = _random_doa(rng)
        d2 = _separated_doa(rng, d1, min_separation_deg)
        return [make(c1, onset, offset, d1), make(c2, onset, offset, d2)]
    raise ValidationError(f"unknown scene kind {kind!r}")


def overfit_preset(
    n_clips: int,
    n_classes: int,
    clip_len_s: float,
    seed: int,
    same_class_min_separation_deg: float = 60.0,
) -> list[dict]:
    """Clip plans for the overfit benchmark set: one third single events, one
    third different-class pairs, one third fully-overlapping same-class pairs.
    Returns per-clip dicts with events, kind, and an own render seed."""
    rng = np.random.default_rng(seed)
    kinds = ["single", "two_diff", "two_same"]
    plans = []
    for i in range(n_clips):
        kind = kinds[i % len(kinds)]
        events = random_scene_events(
            rng, n_classes, clip_len_s, kind, min_separation_deg=same_class_min_separation_deg
        )
        plans.append(
            {
                "clip_id": f"clip{i:03d}",
                "kind": kind,
                "same_class_overlap": kind == "two_same",
                "events": events,
                "render_seed": int(rng.integers(2**31 - 1)),
            }
        )
    return plans
