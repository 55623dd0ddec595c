"""Run a trained model on clips and emit frame-wise track predictions.

A track is emitted only where the test-mode mask holds: its activity
probability clears the threshold AND its SED argmax lands on a non-silence
class. Emitted classes come from that argmax; regressed angles are
canonicalized through the unit-vector round trip (which folds out-of-range
elevations across the pole instead of clamping). No temporal smoothing is
applied anywhere.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .dcase_io import read_wav, write_labels
from .errors import ValidationError
from .features import MelFilterbank, extract_features
from .geometry import angles_from_vectors, unit_vectors
from .losses import ead_mask
from .model import TrackSeldModel
from .scenes import FoaClip, LabelGrid

EAD_THRESHOLD = 0.5


def predict_tracks(
    model: TrackSeldModel,
    clip: FoaClip,
    fb: MelFilterbank | None = None,
    threshold: float = EAD_THRESHOLD,
) -> LabelGrid:
    """Frame-wise track predictions for one clip, as a LabelGrid (inactive
    slots carry the silence class and no angles)."""
    cfg = model.config
    if fb is None:
        fb = MelFilterbank.build(clip.sample_rate_hz, n_mels=cfg.n_mels)
    elif fb.n_mels != cfg.n_mels:
        raise ValidationError(f"filterbank has {fb.n_mels} mel bins, model wants {cfg.n_mels}")
    ft = extract_features(clip, fb)
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(ft.channels).to(dtype)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x)
            mask = ead_mask("test", out.ead_prob, out.sed_logits, cfg.n_classes, threshold)
    finally:
        model.train(was_training)

    active = mask[0].bool().numpy()
    classes = out.sed_logits[0].argmax(dim=-1).numpy()
    az_raw = out.doa[0, :, :, 0].numpy()
    el_raw = out.doa[0, :, :, 1].numpy()
    az, el = angles_from_vectors(unit_vectors(az_raw, el_raw))

    grid = LabelGrid.silent(out.n_frames, cfg.n_track)
    grid.active[:] = active
    grid.class_id[active] = classes[active]
    grid.azimuth[active] = az[active]
    grid.elevation[active] = el[active]
    return grid


def write_predictions(predictions: LabelGrid, csv_path) -> None:
    """DCASE CSV output, rows ordered by (frame, track), integer degrees."""
    write_labels(csv_path, predictions)


def predict_directory(
    model: TrackSeldModel,
    wav_dir,
    out_dir,
    threshold: float = EAD_THRESHOLD,
) -> list[Path]:
    """Predict every ``*.wav`` under ``wav_dir`` (or its ``foa/`` subdir) and
    write one CSV per clip into ``out_dir``."""
    wav_dir = Path(wav_dir)
    if (wav_dir / "foa").is_dir():
        wav_dir = wav_dir / "foa"
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise ValidationError(f"no WAV files under {wav_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fb = None
    written = []
    for wav in wavs:
        clip = read_wav(wav)
        if fb is None or fb.sample_rate_hz != clip.sample_rate_hz:
            fb = MelFilterbank.build(clip.sample_rate_hz, n_mels=model.config.n_mels)
        grid = predict_tracks(model, clip, fb, threshold)
        target = out_dir / (wav.stem + ".csv")
        write_predictions(grid, target)
        written.append(target)
    return written
