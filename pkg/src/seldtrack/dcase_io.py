"""File interchange: 4-channel PCM WAV clips and DCASE-format label CSVs.

Label rows are ``frame,class,track,azimuth_deg,elevation_deg`` with no header;
``frame`` indexes 100 ms hops, angles are integer degrees with azimuth in
[-180, 180) and elevation in [-90, 90]. Only active slots are written, sorted
by (frame, track), so writing is deterministic and an empty file is a valid
all-silent grid.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ValidationError
from .scenes import LABEL_HOP_S, FoaClip, LabelGrid

PCM_SCALE = 32767.0


def write_wav(path, clip: FoaClip) -> None:
    """Write a clip as 16-bit PCM WAV (channels interleaved w,x,y,z)."""
    clipped = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.rint(clipped * PCM_SCALE).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate_hz, pcm.T.copy())


def read_wav(path) -> FoaClip:
    rate, data = wavfile.read(str(path))
    if data.ndim != 2 or data.shape[1] != 4:
        raise ValidationError(f"{path}: expected 4-channel WAV, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValidationError(f"{path}: unsupported WAV sample format {data.dtype}")
    return FoaClip(samples.T, int(rate))


def _angles_to_degrees(azimuth_rad: float, elevation_rad: float) -> tuple[int, int]:
    az = int(round(math.degrees(azimuth_rad)))
    if az >= 180:
        az -= 360
    if az < -180:
        az += 360
    el = int(round(math.degrees(elevation_rad)))
    return az, min(max(el, -90), 90)


def write_labels(path, grid: LabelGrid) -> None:
    """Write a grid's active entries as DCASE CSV rows (degrees, rounded)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for t in range(grid.n_frames):
            for n in range(grid.n_track):
                if not grid.active[t, n]:
                    continue
                az, el = _angles_to_degrees(grid.azimuth[t, n], grid.elevation[t, n])
                writer.writerow([t, int(grid.class_id[t, n]), n, az, el])


def read_labels(
    path,
    n_frames: int | None = None,
    n_track: int = 2,
    n_classes: int | None = None,
    label_hop_s: float = LABEL_HOP_S,
) -> LabelGrid:
    """Parse a DCASE label CSV; rejects malformed rows with their row number.

    ``n_frames=None`` sizes the grid to the last referenced frame (an empty
    file becomes an empty, all-silent grid). Pass ``n_classes`` to enforce the
    class range.
    """
    rows: list[tuple[int, int, int, int, int]] = []
    path = Path(path)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                frame, cls, track, az, el = (int(v) for v in row)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer field ({exc})") from exc
            if frame < 0:
                raise ValidationError(f"{path}:{lineno}: negative frame {frame}")
            if cls < 0 or (n_classes is not None and cls >= n_classes):
                raise ValidationError(f"{path}:{lineno}: class {cls} out of range")
            if not 0 <= track < n_track:
                raise ValidationError(f"{path}:{lineno}: track {track} out of range [0, {n_track})")
            if not -180 <= az < 180:
                raise ValidationError(f"{path}:{lineno}: azimuth {az} outside [-180, 180)")
            if not -90 <= el <= 90:
                raise ValidationError(f"{path}:{lineno}: elevation {el} outside [-90, 90]")
            rows.append((frame, cls, track, az, el))

    if n_frames is None:
        n_frames = max((r[0] for r in rows), default=-1) + 1
    grid = LabelGrid.silent(n_frames, n_track, label_hop_s)
    seen: set[tuple[int, int]] = set()
    for frame, cls, track, az, el in rows:
        if frame >= n_frames:
            raise ValidationError(f"{path}: frame {frame} beyond grid of {n_frames} frames")
        if (frame, track) in seen:
            raise ValidationError(f"{path}: duplicate entry for frame {frame}, track {track}")
        seen.add((frame, track))
        grid.active[frame, track] = True
        grid.class_id[frame, track] = cls
        grid.azimuth[frame, track] = math.radians(az)
        grid.elevation[frame, track] = math.radians(el)
    return grid
