import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seldtrack.errors import ValidationError
from seldtrack.geometry import DoaAngle, angular_distance
from seldtrack.metrics import (
    MetricsConfig,
    MetricsAccumulator,
    compute_metrics,
    match_frame,
)
from seldtrack.scenes import LabelGrid


def grid_from_rows(n_frames, rows, n_track=2):
    """rows: (frame, track, class, az_deg, el_deg)"""
    g = LabelGrid.silent(n_frames, n_track)
    for t, n, c, az, el in rows:
        g.active[t, n] = True
        g.class_id[t, n] = c
        g.azimuth[t, n] = math.radians(az)
        g.elevation[t, n] = math.radians(el)
    return g


def random_grid(seed, n_frames=25, n_track=2, n_classes=4):
    rng = np.random.default_rng(seed)
    g = LabelGrid.silent(n_frames, n_track)
    for t in range(n_frames):
        for n in range(n_track):
            if rng.random() < 0.5:
                g.active[t, n] = True
                g.class_id[t, n] = rng.integers(n_classes)
                g.azimuth[t, n] = rng.uniform(-math.pi, math.pi)
                g.elevation[t, n] = rng.uniform(-math.pi / 2, math.pi / 2)
    return g


class TestAngularDistance:
    def test_identical_zero(self):
        a = DoaAngle.from_degrees(33, -12)
        assert angular_distance(a, a) == pytest.approx(0.0, abs=1e-9)

    def test_antipodal(self):
        a = DoaAngle.from_degrees(10, 20)
        b = DoaAngle.from_degrees(-170, -20)
        assert angular_distance(a, b) == pytest.approx(180.0, abs=1e-9)

    def test_orthogonal_axes(self):
        assert angular_distance(
            DoaAngle.from_degrees(0, 0), DoaAngle.from_degrees(90, 0)
        ) == pytest.approx(90.0, abs=1e-9)


class TestMatchFrame:
    def test_single_pair_matches_regardless_of_distance(self):
        m, up, ur = match_frame(
            [(1, DoaAngle.from_degrees(0, 0))], [(1, DoaAngle.from_degrees(170, 0))]
        )
        assert len(m) == 1 and not up and not ur
        assert m[0][2] == pytest.approx(170.0, abs=1e-9)

    def test_crossed_same_class_pairs_take_minimum(self):
        preds = [(0, DoaAngle.from_degrees(0, 0)), (0, DoaAngle.from_degrees(90, 0))]
        refs = [(0, DoaAngle.from_degrees(85, 0)), (0, DoaAngle.from_degrees(5, 0))]
        matches, _, _ = match_frame(preds, refs)
        total = sum(d for _, _, d in matches)
        # exhaustive 2x2 oracle
        best = min(
            angular_distance(preds[0][1], refs[p[0]][1]) + angular_distance(preds[1][1], refs[p[1]][1])
            for p in itertools.permutations(range(2))
        )
        assert total == pytest.approx(best, abs=1e-9)
        assert {(p, r) for p, r, _ in matches} == {(0, 1), (1, 0)}

    def test_disjoint_classes_never_match(self):
        m, up, ur = match_frame(
            [(0, DoaAngle.from_degrees(0, 0))], [(1, DoaAngle.from_degrees(0, 0))]
        )
        assert not m and up == [0] and ur == [0]

    @pytest.mark.parametrize("n_pred, n_ref", [(2, 3), (3, 2), (3, 3), (1, 3)])
    def test_matches_exhaustive_oracle(self, n_pred, n_ref):
        rng = np.random.default_rng(n_pred * 10 + n_ref)
        preds = [(0, DoaAngle(rng.uniform(-3, 3), rng.uniform(-1.5, 1.5))) for _ in range(n_pred)]
        refs = [(0, DoaAngle(rng.uniform(-3, 3), rng.uniform(-1.5, 1.5))) for _ in range(n_ref)]
        matches, _, _ = match_frame(preds, refs)
        total = sum(d for _, _, d in matches)
        k = min(n_pred, n_ref)
        best = min(
            sum(angular_distance(preds[i][1], refs[j][1]) for i, j in zip(rows, cols))
            for rows in itertools.permutations(range(n_pred), k)
            for cols in itertools.permutations(range(n_ref), k)
        )
        assert total == pytest.approx(best, abs=1e-9)


class TestComputeMetrics:
    def test_perfect_predictions(self):
        g = random_grid(3)
        rep = compute_metrics(g, g)
        assert rep.er == 0.0
        assert rep.f == 1.0
        assert rep.le_deg == pytest.approx(0.0, abs=1e-9)
        assert rep.lr == 1.0

    def test_thirty_degree_offset_construction(self):
        # one event, predictions correct class but rotated 30 degrees in azimuth
        n = 20
        ref = grid_from_rows(n, [(t, 0, 1, 0, 0) for t in range(n)])
        pred = grid_from_rows(n, [(t, 0, 1, 30, 0) for t in range(n)])
        rep = compute_metrics(pred, ref)
        assert rep.f == 0.0
        assert rep.er == 1.0
        assert rep.le_deg == pytest.approx(30.0, abs=0.1)
        assert rep.lr == 1.0

    def test_no_predictions_all_deletions(self):
        ref = grid_from_rows(10, [(t, 0, 2, 10, 5) for t in range(10)])
        rep = compute_metrics(LabelGrid.silent(10, 2), ref)
        assert rep.f == 0.0
        assert rep.er == 1.0
        assert rep.d == 10 and rep.s == 0 and rep.i == 0
        assert rep.lr == 0.0
        assert rep.le_deg is None

    def test_empty_reference_sentinel(self):
        rep = compute_metrics(LabelGrid.silent(5, 2), LabelGrid.silent(5, 2))
        assert rep.lr is None and rep.le_deg is None
        assert rep.er == 0.0 and rep.f == 0.0

    def test_shorter_grid_padded_with_silence(self):
        ref = grid_from_rows(10, [(t, 0, 1, 0, 0) for t in range(10)])
        pred = grid_from_rows(4, [(t, 0, 1, 0, 0) for t in range(4)])
        rep = compute_metrics(pred, ref)
        assert rep.tp == 4 and rep.fn == 6

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_perfection_property(self, seed):
        g = random_grid(seed)
        rep = compute_metrics(g, g)
        active = int(g.active.sum())
        assert rep.f == (1.0 if active else 0.0)
        assert rep.er == 0.0
        assert rep.lr == (1.0 if active else None)

    def test_threshold_monotonicity(self):
        ref = random_grid(11)
        pred = random_grid(12)
        last_f, last_er = -1.0, math.inf
        for t_deg in (5.0, 10.0, 20.0, 40.0):
            rep = compute_metrics(pred, ref, MetricsConfig(threshold_deg=t_deg))
            assert rep.f >= last_f
            assert rep.er <= last_er
            last_f, last_er = rep.f, rep.er

    def test_le_independent_of_threshold(self):
        ref = random_grid(21)
        pred = random_grid(22)
        les = {
            compute_metrics(pred, ref, MetricsConfig(threshold_deg=t)).le_deg
            for t in (5.0, 20.0, 60.0)
        }
        assert len(les) == 1

    def test_segment_aggregation_follows_counts(self):
        # 1 segment of 10 frames: 3 frames FP-only, 1 frame FN-only
        ref = grid_from_rows(10, [(0, 0, 1, 0, 0)])
        pred = grid_from_rows(10, [(t, 0, 1, 0, 0) for t in (2, 3, 4)])
        rep = compute_metrics(pred, ref)
        assert (rep.s, rep.d, rep.i) == (1, 0, 2)
        assert rep.er == (1 + 0 + 2) / 1

    def test_per_frame_segments_config(self):
        ref = grid_from_rows(10, [(0, 0, 1, 0, 0)])
        pred = grid_from_rows(10, [(t, 0, 1, 0, 0) for t in (2, 3, 4)])
        rep = compute_metrics(pred, ref, MetricsConfig(segment_len_frames=1))
        assert (rep.s, rep.d, rep.i) == (0, 1, 3)

    def test_accumulator_over_files(self):
        cfgs = MetricsConfig()
        acc = MetricsAccumulator(cfgs)
        g1, g2 = random_grid(31), random_grid(32)
        acc.update(g1, g1)
        acc.update(g2, g2)
        rep = acc.report()
        assert rep.f == 1.0 and rep.er == 0.0

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MetricsConfig(threshold_deg=0)
        with pytest.raises(ValidationError):
            MetricsConfig(segment_len_frames=0)
