import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitkit.errors import ContractError, DataError
from gaitkit.skelmap import (
    DEFAULT_LIMBS,
    RenderConfig,
    finalize_map,
    normalize_pose,
    point_segment_distance,
    read_pose_jsonl,
    render_frame,
    render_joint_map,
    render_limb_map,
    render_sequence,
    write_pose_jsonl,
)


def brute_force_joint_map(kps, cfg):
    """Direct per-pixel evaluation of the joint-map formula, pure Python."""
    r = cfg.canvas
    out = [[0.0] * r for _ in range(r)]
    for j in range(r):       # vertical coordinate
        for i in range(r):   # horizontal coordinate
            s = 0.0
            for x, y, c in kps:
                s += math.exp(-((i - x) ** 2 + (j - y) ** 2) / (2 * cfg.sigma ** 2)) * c
            out[j][i] = s
    return np.asarray(out)


def brute_force_limb_map(kps, cfg):
    r = cfg.canvas
    out = [[0.0] * r for _ in range(r)]
    for j in range(r):
        for i in range(r):
            s = 0.0
            for a, b in cfg.limbs:
                ax, ay, ac = kps[a - 1]
                bx, by, bc = kps[b - 1]
                c = min(ac, bc)
                if c <= 0:
                    continue
                d = point_segment_distance((i, j), (ax, ay), (bx, by))
                s += math.exp(-(d ** 2) / (2 * cfg.sigma ** 2)) * c
            out[j][i] = s
    return np.asarray(out)


def make_pose(rng, spread=40.0, center=(100.0, 100.0)):
    """A random but valid 17-joint pose (hips present, nonzero height)."""
    kps = np.ones((17, 3))
    kps[:, 0] = center[0] + rng.uniform(-spread / 2, spread / 2, 17)
    kps[:, 1] = center[1] + rng.uniform(-spread, spread, 17)
    kps[:, 2] = rng.uniform(0.3, 1.0, 17)
    kps[11, 2] = kps[12, 2] = 1.0
    if np.ptp(kps[kps[:, 2] > 0, 1]) < 1.0:
        kps[0, 1] = center[1] - spread
        kps[15, 1] = center[1] + spread
    return kps


class TestNormalize:
    CFG = RenderConfig(height=64)

    def test_worked_example(self):
        # hips (10,30),(14,30), head (12,10), ankle (12,50), H=64, R=128
        kps = np.ones((17, 3))
        kps[:, 0], kps[:, 1] = 12.0, 30.0
        kps[0, :2] = (12.0, 10.0)    # nose at the top
        kps[11, :2] = (10.0, 30.0)   # left hip
        kps[12, :2] = (14.0, 30.0)   # right hip
        kps[15, :2] = (12.0, 50.0)   # ankle at the bottom
        out = normalize_pose(kps, self.CFG)
        np.testing.assert_allclose(out[0, :2], (32.0, 0.0), atol=1e-12)
        np.testing.assert_allclose(out[11, :2], (28.8, 32.0), atol=1e-12)
        np.testing.assert_allclose(out[12, :2], (35.2, 32.0), atol=1e-12)
        np.testing.assert_allclose(out[15, :2], (32.0, 64.0), atol=1e-12)

    def test_y_range_maps_to_exactly_zero_h(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            out = normalize_pose(make_pose(rng), self.CFG)
            ys = out[out[:, 2] > 0, 1]
            assert abs(ys.min() - 0.0) <= 1e-9
            assert abs(ys.max() - 64.0) <= 1e-9

    def test_translation_cancels(self):
        rng = np.random.default_rng(1)
        kps = make_pose(rng)
        kps[:, :2] = np.round(kps[:, :2] * 256) / 256  # exact dyadic arithmetic
        moved = kps.copy()
        moved[:, 0] += 37.0
        moved[:, 1] -= 11.0
        np.testing.assert_array_equal(normalize_pose(kps, self.CFG),
                                      normalize_pose(moved, self.CFG))

    def test_aspect_ratios_preserved(self):
        # one divisor scales both axes, so coordinate-difference ratios survive
        rng = np.random.default_rng(2)
        kps = make_pose(rng)
        out = normalize_pose(kps, self.CFG)
        dx_in = kps[5, 0] - kps[6, 0]
        dy_in = kps[5, 1] - kps[6, 1]
        dx_out = out[5, 0] - out[6, 0]
        dy_out = out[5, 1] - out[6, 1]
        if abs(dy_in) > 1e-9 and abs(dy_out) > 1e-9:
            np.testing.assert_allclose(dx_in / dy_in, dx_out / dy_out, rtol=1e-9)

    def test_confidences_unchanged(self):
        rng = np.random.default_rng(3)
        kps = make_pose(rng)
        out = normalize_pose(kps, self.CFG)
        np.testing.assert_array_equal(out[:, 2], kps[:, 2])

    def test_degenerate_pose_rejected(self):
        kps = np.ones((17, 3))
        kps[:, 0] = np.arange(17.0)
        kps[:, 1] = 5.0  # zero vertical extent
        with pytest.raises(DataError, match="degenerate"):
            normalize_pose(kps, self.CFG)

    def test_missing_hip_rejected(self):
        rng = np.random.default_rng(4)
        kps = make_pose(rng)
        kps[11, 2] = 0.0
        with pytest.raises(DataError, match="hip"):
            normalize_pose(kps, self.CFG)


class TestJointMap:
    def test_joint_on_pixel_peaks_at_one(self):
        cfg = RenderConfig(height=16, sigma=2.0)
        kps = np.zeros((17, 3))
        kps[0] = (10.0, 12.0, 1.0)
        out = render_joint_map(kps, cfg)
        assert out[12, 10] == pytest.approx(1.0, abs=1e-12)

    def test_zero_confidence_gives_zero_map(self):
        cfg = RenderConfig(height=16, sigma=2.0)
        kps = np.zeros((17, 3))
        kps[:, :2] = 10.0
        assert not render_joint_map(kps, cfg).any()

    def test_value_at_distance_sigma(self):
        cfg = RenderConfig(height=16, sigma=3.0)
        kps = np.zeros((17, 3))
        kps[0] = (8.0, 8.0, 1.0)
        out = render_joint_map(kps, cfg)
        np.testing.assert_allclose(out[8, 11], math.exp(-0.5), atol=1e-12)  # 3 px right

    def test_monotone_in_sigma(self):
        kps = np.zeros((17, 3))
        kps[0] = (10.0, 20.0, 0.8)
        small = render_joint_map(kps, RenderConfig(height=16, sigma=2.0))
        big = render_joint_map(kps, RenderConfig(height=16, sigma=4.0))
        mask = np.ones_like(small, dtype=bool)
        mask[20, 10] = False  # the joint pixel itself stays at c
        assert (big[mask] >= small[mask]).all()


class TestSegmentDistance:
    def test_point_on_segment(self):
        assert point_segment_distance((0.5, 0.0), (0.0, 0.0), (1.0, 0.0)) == 0.0

    def test_perpendicular_foot(self):
        assert point_segment_distance((0.0, 1.0), (-1.0, 0.0), (1.0, 0.0)) == pytest.approx(1.0)

    def test_beyond_endpoint(self):
        assert point_segment_distance((3.0, 0.0), (-1.0, 0.0), (1.0, 0.0)) == pytest.approx(2.0)

    def test_degenerate_segment(self):
        assert point_segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)) == pytest.approx(5.0)


class TestLimbMap:
    def _one_limb_cfg(self):
        return RenderConfig(height=16, sigma=3.0, limbs=[(1, 2)])

    def test_zero_confidence_endpoints(self):
        cfg = self._one_limb_cfg()
        kps = np.zeros((17, 3))
        kps[0] = (4.0, 8.0, 0.0)
        kps[1] = (12.0, 8.0, 1.0)
        assert not render_limb_map(kps, cfg).any()

    def test_pixel_on_limb_is_one(self):
        cfg = self._one_limb_cfg()
        kps = np.zeros((17, 3))
        kps[0] = (4.0, 8.0, 1.0)
        kps[1] = (12.0, 8.0, 1.0)
        out = render_limb_map(kps, cfg)
        assert out[8, 7] == pytest.approx(1.0, abs=1e-12)

    def test_pixel_at_sigma_from_segment(self):
        cfg = self._one_limb_cfg()
        kps = np.zeros((17, 3))
        kps[0] = (4.0, 8.0, 1.0)
        kps[1] = (12.0, 8.0, 1.0)
        out = render_limb_map(kps, cfg)
        np.testing.assert_allclose(out[11, 8], math.exp(-0.5), atol=1e-12)

    def test_min_confidence_weighting(self):
        cfg = self._one_limb_cfg()
        kps = np.zeros((17, 3))
        kps[0] = (4.0, 8.0, 0.4)
        kps[1] = (12.0, 8.0, 0.9)
        out = render_limb_map(kps, cfg)
        assert out[8, 8] == pytest.approx(0.4, abs=1e-9)


class TestOracle:
    @pytest.mark.parametrize("seed", range(6))
    def test_renderers_match_pure_python_oracle(self, seed):
        cfg = RenderConfig(height=16, sigma=2.5)
        rng = np.random.default_rng(seed)
        kps = normalize_pose(make_pose(rng, spread=12.0), cfg)
        np.testing.assert_allclose(render_joint_map(kps, cfg),
                                   brute_force_joint_map(kps, cfg), atol=1e-6)
        np.testing.assert_allclose(render_limb_map(kps, cfg),
                                   brute_force_limb_map(kps, cfg), atol=1e-6)

    def test_full_size_oracle_once(self):
        cfg = RenderConfig(height=64, sigma=8.0)
        rng = np.random.default_rng(99)
        kps = normalize_pose(make_pose(rng), cfg)
        got = render_joint_map(kps, cfg)
        # row-by-row numpy evaluation, organized differently from the renderer
        r = cfg.canvas
        expect = np.zeros((r, r))
        xs = np.arange(r)
        for j in range(r):
            for x, y, c in kps:
                expect[j] += np.exp(-((xs - x) ** 2 + (j - y) ** 2) / (2 * cfg.sigma ** 2)) * c
        np.testing.assert_allclose(got, expect, atol=1e-9)

    def test_map_bounds(self):
        cfg = RenderConfig(height=16, sigma=2.0)
        rng = np.random.default_rng(7)
        kps = normalize_pose(make_pose(rng, spread=12.0), cfg)
        j = render_joint_map(kps, cfg)
        l = render_limb_map(kps, cfg)
        assert (j >= 0).all() and (l >= 0).all()
        assert j.max() <= kps[:, 2].sum() + 1e-9
        limb_cap = sum(min(kps[a - 1, 2], kps[b - 1, 2]) for a, b in cfg.limbs)
        assert l.max() <= limb_cap + 1e-9


class TestFinalize:
    def test_output_shape(self):
        cfg = RenderConfig(height=64)
        rng = np.random.default_rng(8)
        kps = normalize_pose(make_pose(rng), cfg)
        out = render_frame(make_pose(rng), cfg)
        assert out.shape == (2, 64, 44)
        del kps

    def test_crop_box_definition(self):
        cfg = RenderConfig(height=64)
        j = np.zeros((128, 128))
        j[20:85, 32:96] = 1.0  # rows 20..84 inclusive, the central 64 columns
        rows = np.nonzero((j > 1e-3).any(axis=1))[0]
        assert rows[0] == 20 and rows[-1] == 84
        out = finalize_map(j, np.zeros_like(j), cfg)
        assert out.shape == (2, 64, 44)
        assert (out[0] > 0.99).all()  # solid block survives crop+resize+cut

    def test_all_zero_rejected(self):
        cfg = RenderConfig(height=64)
        with pytest.raises(DataError, match="all-zero"):
            finalize_map(np.zeros((128, 128)), np.zeros((128, 128)), cfg)

    def test_mirror_symmetry_preserved(self):
        cfg = RenderConfig(height=64)
        rng = np.random.default_rng(9)
        base = rng.random((128, 128))
        sym = base + base[:, ::-1]      # symmetric about the vertical center line
        sym[:10] = 0.0
        sym[-10:] = 0.0
        out = finalize_map(sym, sym, cfg)
        np.testing.assert_allclose(out, out[:, :, ::-1], atol=1e-12)

    def test_all_values_nonnegative(self):
        cfg = RenderConfig(height=64)
        rng = np.random.default_rng(10)
        out = render_frame(make_pose(rng), cfg)
        assert (out >= 0).all()


class TestSequence:
    def test_empty_sequence(self):
        result = render_sequence([], RenderConfig(height=16))
        assert result.maps.shape == (0, 2, 64, 44)
        assert result.dropped == []

    def test_all_valid_frames_kept(self):
        rng = np.random.default_rng(11)
        frames = [make_pose(rng) for _ in range(5)]
        result = render_sequence(frames, RenderConfig(height=32, sigma=4.0))
        assert result.maps.shape[0] == 5 and not result.dropped

    def test_degenerate_frame_dropped_and_counted(self):
        rng = np.random.default_rng(12)
        frames = [make_pose(rng) for _ in range(4)]
        bad = np.ones((17, 3))
        bad[:, 1] = 3.0
        frames.insert(2, bad)
        result = render_sequence(frames, RenderConfig(height=32, sigma=4.0))
        assert result.maps.shape[0] == 4
        assert len(result.dropped) == 1 and result.dropped[0][0] == 2


class TestRenderConfig:
    def test_default_canvas_is_double_height(self):
        assert RenderConfig(height=64).canvas == 128

    def test_default_limb_table_has_19_edges(self):
        assert len(DEFAULT_LIMBS) == 19
        assert all(1 <= a <= 17 and 1 <= b <= 17 for a, b in DEFAULT_LIMBS)

    def test_bad_sigma_rejected(self):
        with pytest.raises(ContractError):
            RenderConfig(height=64, sigma=0.0)

    def test_bad_limb_index_rejected(self):
        with pytest.raises(ContractError):
            RenderConfig(height=64, limbs=[(0, 5)])


class TestTranslationInvariance:
    @settings(max_examples=25, deadline=None)
    @given(dx=st.integers(-300, 300), dy=st.integers(-300, 300))
    def test_finalized_map_bit_identical_under_translation(self, dx, dy):
        # dyadic coordinates and integer offsets keep the arithmetic exact
        cfg = RenderConfig(height=16, sigma=2.0)
        rng = np.random.default_rng(13)
        kps = make_pose(rng, spread=12.0)
        kps[:, :2] = np.round(kps[:, :2] * 256) / 256
        moved = kps.copy()
        moved[:, 0] += dx
        moved[:, 1] += dy
        a = render_frame(kps, cfg)
        b = render_frame(moved, cfg)
        assert np.array_equal(a, b)


class TestPoseJsonl:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        frames = [make_pose(rng) for _ in range(3)]
        path = tmp_path / "seq.jsonl"
        write_pose_jsonl(path, frames)
        back = read_pose_jsonl(path)
        assert len(back) == 3
        np.testing.assert_allclose(back[0], np.round(frames[0] * 1e4) / 1e4, atol=1e-9)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"frame": 0, "keypoints": [[1,2,3]\n', encoding="utf-8")
        with pytest.raises(DataError):
            read_pose_jsonl(path)
