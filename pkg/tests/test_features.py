import math

import numpy as np
import pytest

from seldtrack.errors import ValidationError
from seldtrack.features import (
    HOP,
    LOG_FLOOR,
    WINDOW_LEN,
    MelFilterbank,
    bin_intensity,
    doa_from_intensity,
    extract_features,
    hann_window,
    intensity_vector,
    logmel,
    n_stft_frames,
    read_feature_dump,
    stft_clip,
    write_feature_dump,
)
from seldtrack.geometry import DoaAngle, angular_distance, great_circle_deg, unit_vectors
from seldtrack.scenes import FoaClip, SceneEvent, encode_plane_wave, synth_scene

SR = 24000


def mono_clip(x):
    return FoaClip(np.stack([x, x, x, x]), SR)


@pytest.fixture(scope="module")
def fb():
    return MelFilterbank.build(SR)


class TestStft:
    def test_zero_signal(self):
        spec = stft_clip(mono_clip(np.zeros(4800)))
        assert spec.values.shape == (4, WINDOW_LEN // 2 + 1, n_stft_frames(4800))
        assert np.all(spec.values == 0)

    def test_dc_response_equals_window_sum(self):
        spec = stft_clip(mono_clip(np.ones(4800)))
        expected = hann_window().sum()
        np.testing.assert_allclose(np.abs(spec.values[0, 0]), expected, rtol=1e-12)

    def test_sine_at_bin_center_matches_direct_dft(self):
        k = 100
        f = k * SR / WINDOW_LEN
        n = WINDOW_LEN + 3 * HOP
        x = np.sin(2 * math.pi * f * np.arange(n) / SR)
        spec = stft_clip(mono_clip(x))
        # direct DFT oracle on the first frame
        frame = x[:WINDOW_LEN] * hann_window()
        oracle = np.array(
            [np.sum(frame * np.exp(-2j * math.pi * kk * np.arange(WINDOW_LEN) / WINDOW_LEN))
             for kk in range(WINDOW_LEN // 2 + 1)]
        )
        np.testing.assert_allclose(spec.values[0, :, 0], oracle, atol=1e-8)
        mags = np.abs(spec.values[0, :, 0])
        assert mags.argmax() == k
        # Hann leakage: immediate neighbours at half the peak, far bins tiny
        assert mags[k - 1] == pytest.approx(mags[k] / 2, rel=1e-2)
        assert mags[k + 1] == pytest.approx(mags[k] / 2, rel=1e-2)
        assert np.all(mags[: k - 2] < 1e-2 * mags[k])

    def test_fft_and_conv_methods_agree(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 3 * WINDOW_LEN))
        clip = FoaClip(x, SR)
        a = stft_clip(clip, method="fft").values
        b = stft_clip(clip, method="conv").values
        assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-6

    def test_rejects_short_clip(self):
        with pytest.raises(ValidationError, match="shorter"):
            stft_clip(mono_clip(np.zeros(100)))


class TestMelFilterbank:
    def test_rows_sum_to_one_with_triangular_support(self, fb):
        np.testing.assert_allclose(fb.weights.sum(axis=1), 1.0, rtol=1e-12)
        assert fb.weights.min() >= 0.0
        assert fb.weights.shape == (64, 513)
        # interior rows overlap their neighbours
        overlaps = (fb.weights[:-1] * fb.weights[1:]).sum(axis=1)
        assert np.all(overlaps[5:] > 0)


class TestLogmel:
    def test_zero_spectrogram_hits_floor(self, fb):
        spec = stft_clip(mono_clip(np.zeros(4800)))
        out = logmel(spec, fb)
        np.testing.assert_allclose(out, math.log(LOG_FLOOR))

    def test_doubling_amplitude_adds_log4(self, fb):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4800)
        a = logmel(stft_clip(mono_clip(x)), fb)
        b = logmel(stft_clip(mono_clip(2 * x)), fb)
        np.testing.assert_allclose(b - a, math.log(4.0), atol=1e-9)

    def test_matches_dense_matrix_oracle(self, fb):
        rng = np.random.default_rng(2)
        clip = FoaClip(rng.standard_normal((4, 2048)), SR)
        spec = stft_clip(clip)
        out = logmel(spec, fb)
        for c in range(4):
            for t in range(spec.n_frames):
                oracle = np.log(fb.weights @ np.abs(spec.values[c, :, t]) ** 2 + LOG_FLOOR)
                np.testing.assert_allclose(out[c, t], oracle, atol=1e-9)

    def test_shape_mismatch_rejected(self, fb):
        small = MelFilterbank.build(SR, n_mels=8, window_len=256)
        spec = stft_clip(mono_clip(np.zeros(4800)))
        with pytest.raises(ValidationError):
            logmel(spec, small)


def plane_wave_spec(az_deg, el_deg, seconds=0.5, seed=0, class_id=0, n_classes=1):
    ev = SceneEvent.static(class_id, 0.0, seconds, DoaAngle.from_degrees(az_deg, el_deg))
    clip, _ = synth_scene([ev], seconds, rng_seed=seed, n_classes=n_classes)
    return stft_clip(clip)


class TestIntensity:
    def test_silent_frames_are_zero(self, fb):
        spec = stft_clip(mono_clip(np.zeros(4800)))
        np.testing.assert_allclose(intensity_vector(spec, fb), 0.0)

    def test_bin_vectors_unit_norm_above_floor(self):
        spec = plane_wave_spec(30, 20)
        unit, mag = bin_intensity(spec)
        norms = np.sqrt((unit**2).sum(axis=0))
        assert norms.max() <= 1.0 + 1e-12
        strong = mag > 1e-6
        np.testing.assert_allclose(norms[strong], 1.0, atol=1e-3)

    def test_plane_wave_bins_point_at_source(self):
        az, el = 50, -35
        spec = plane_wave_spec(az, el)
        unit, mag = bin_intensity(spec)
        expected = unit_vectors(math.radians(az), math.radians(el))
        strong = mag > 0.03 * mag.max()
        errs = np.abs(unit[:, strong] - expected[:, None])
        assert errs.max() < 1e-3

    def test_two_disjoint_band_sources_split_by_bin(self, fb):
        # classes 0 and 2 of a 3-class table occupy disjoint bands
        d1, d2 = DoaAngle.from_degrees(-90, 0), DoaAngle.from_degrees(60, 30)
        events = [
            SceneEvent.static(0, 0.0, 0.5, d1),
            SceneEvent.static(2, 0.0, 0.5, d2),
        ]
        clip, _ = synth_scene(events, 0.5, rng_seed=4, n_classes=3)
        spec = stft_clip(clip)
        unit, mag = bin_intensity(spec)
        freqs = np.arange(spec.n_bins) * SR / WINDOW_LEN
        from seldtrack.scenes import class_band_hz

        for cls, doa in ((0, d1), (2, d2)):
            lo, hi = class_band_hz(cls, 3, SR)
            band = (freqs >= lo) & (freqs <= hi)
            strong = band[:, None] & (mag > 0.05 * mag[band].max())
            mean_vec = unit[:, strong].mean(axis=1)
            mean_vec /= np.linalg.norm(mean_vec)
            cos = float(mean_vec @ doa.to_vector())
            assert cos > 0.999

    def test_intensity_feature_has_minus_sign(self, fb):
        spec = plane_wave_spec(0, 0)  # source on +x
        iv = intensity_vector(spec, fb)  # (3, T, K)
        active = np.abs(iv[0]) > 0.1
        assert active.any()
        assert np.all(iv[0][active] < 0)


class TestDoaFromIntensity:
    def test_recovers_oblique_angles(self):
        spec = plane_wave_spec(60, -30)
        est = doa_from_intensity(spec)
        assert est.valid.all()
        errs = great_circle_deg(est.azimuth, est.elevation, math.radians(60), math.radians(-30))
        assert np.median(errs) < 1.0

    def test_axis_case_tight(self):
        spec = plane_wave_spec(0, 0)
        est = doa_from_intensity(spec)
        errs = great_circle_deg(est.azimuth, est.elevation, 0.0, 0.0)
        assert np.median(errs) < 0.1
        assert np.median(est.confidence[est.valid]) > 0.99

    def test_silence_flagged_noise_low_confidence(self):
        spec = stft_clip(mono_clip(np.zeros(4800)))
        est = doa_from_intensity(spec)
        assert not est.valid.any()

        rng = np.random.default_rng(7)
        noise = np.vstack(
            [rng.standard_normal(4800), rng.standard_normal((3, 4800)) / math.sqrt(3)]
        )
        est = doa_from_intensity(stft_clip(FoaClip(noise, SR)))
        assert np.median(est.confidence) < 0.5

    def test_rotation_covariance(self):
        base = plane_wave_spec(0, 10)
        base_est = doa_from_intensity(base)
        for step in range(8):
            dd = -180 + 45 * step
            est = doa_from_intensity(plane_wave_spec(dd, 10))
            rotated = np.degrees(est.azimuth) - dd
            baseline = np.degrees(base_est.azimuth)
            diff = (rotated - baseline + 180) % 360 - 180
            assert np.max(np.abs(np.median(diff))) < 0.5


class TestFeatureTensor:
    def test_geometry_shared_and_stacked(self, fb):
        clip, _ = synth_scene(
            [SceneEvent.static(0, 0.0, 1.0, DoaAngle(0.3, 0.2))], 1.0, rng_seed=1, n_classes=1
        )
        ft = extract_features(clip, fb)
        t = n_stft_frames(clip.n_samples)
        assert ft.channels.shape == (7, t, 64)
        lm = logmel(stft_clip(clip), fb)
        iv = intensity_vector(stft_clip(clip), fb)
        np.testing.assert_array_equal(ft.channels[:4], lm)
        np.testing.assert_array_equal(ft.channels[4:], iv)

    def test_dump_round_trip(self, tmp_path, fb):
        clip, _ = synth_scene(
            [SceneEvent.static(0, 0.0, 0.5, DoaAngle(0.0, 0.0))], 0.5, rng_seed=2, n_classes=1
        )
        ft = extract_features(clip, fb)
        p = tmp_path / "feat.bin"
        write_feature_dump(ft, p)
        back = read_feature_dump(p)
        assert back.shape == ft.channels.shape
        np.testing.assert_allclose(back, ft.channels, atol=1e-6)
