import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereosr import bipam, occlusion, reference, synthetic
from stereosr.synthetic import Layer, SceneError, SceneSpec


def scene_from_seed(seed):
    return synthetic.render_scene(synthetic.random_spec(np.random.default_rng(seed)))


class TestRender:
    def test_disparity_zero_layer(self):
        scene = synthetic.render_scene(SceneSpec(20, 10, (Layer(3, 2, 6, 5, 0, "noise", 4),)))
        np.testing.assert_array_equal(scene.pair.left, scene.pair.right)
        assert not scene.occ_l.any() and not scene.occ_r.any()

    def test_two_object_bands(self):
        scene = synthetic.render_scene(synthetic.two_object_spec())
        bands = synthetic.occlusion_bands(scene)
        assert {run for _, _, run, _ in bands} == {5, 10}
        assert all(run == want for _, _, run, want in bands)
        # near layers start at columns 20 and 60; their bands sit just left of those edges
        cols = np.nonzero(scene.occ_l.any(axis=0))[0]
        np.testing.assert_array_equal(cols, list(range(15, 20)) + list(range(50, 60)))
        assert scene.occ_l.sum() == 20 * 5 + 24 * 10

    def test_two_object_right_bands_mirror_left(self):
        scene = synthetic.render_scene(synthetic.two_object_spec())
        # in the right view the uncovered strip lies just right of each object
        cols = np.nonzero(scene.occ_r.any(axis=0))[0]
        np.testing.assert_array_equal(cols, list(range(39, 44)) + list(range(76, 86)))

    def test_boundary_occlusion(self):
        scene = synthetic.render_scene(SceneSpec(16, 4, background_disparity=3))
        np.testing.assert_array_equal(scene.occ_l.any(axis=0), np.arange(16) < 3)
        np.testing.assert_array_equal(scene.occ_r.any(axis=0), np.arange(16) >= 13)

    def test_mirror(self):
        spec = synthetic.two_object_spec()
        a = synthetic.render_scene(spec)
        b = synthetic.render_scene(synthetic.mirror_spec(spec))
        np.testing.assert_array_equal(b.occ_l, a.occ_r[:, ::-1])
        np.testing.assert_array_equal(b.occ_r, a.occ_l[:, ::-1])
        np.testing.assert_array_equal(b.disparity_l, a.disparity_r[:, ::-1])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_occlusion_matches_z_buffer_definition(self, seed):
        scene = scene_from_seed(seed)
        d_l = np.rint(scene.disparity_l).astype(int)
        d_r = np.rint(scene.disparity_r).astype(int)
        h, w = d_l.shape
        for i in range(h):
            for x in range(w):
                u = x - d_l[i, x]
                assert scene.occ_l[i, x] == (u < 0 or d_r[i, u] != d_l[i, x])
        assert scene.pair.left.min() >= 0 and scene.pair.left.max() <= 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_clean_band_widths_equal_steps(self, seed):
        for _, _, run, step in synthetic.occlusion_bands(scene_from_seed(seed)):
            assert run == step

    def test_layer_behind_background_rejected(self):
        with pytest.raises(SceneError, match="behind"):
            synthetic.render_scene(SceneSpec(16, 4, (Layer(0, 0, 4, 4, 1),), background_disparity=2))

    def test_right_gain(self):
        base = SceneSpec(16, 4, background_pattern="flat")
        a = synthetic.render_scene(base)
        b = synthetic.render_scene(SceneSpec(16, 4, background_pattern="flat", right_gain=0.5))
        np.testing.assert_allclose(b.pair.right, a.pair.right * 0.5, atol=1e-7)
        np.testing.assert_array_equal(b.pair.left, a.pair.left)

    @pytest.mark.parametrize("layer", [Layer(10, 0, 8, 4, 2), Layer(0, 0, 4, 4, -1),
                                       Layer(0, 0, 4, 4, 1, "plaid")])
    def test_invalid_spec(self, layer):
        with pytest.raises(SceneError):
            synthetic.render_scene(SceneSpec(16, 4, (layer,)))


class TestAnalyticAttention:
    def test_identity(self):
        maps = synthetic.analytic_attention(np.zeros((2, 5)), np.zeros((2, 5), bool))
        for m in maps:
            np.testing.assert_array_equal(m, np.broadcast_to(np.eye(5), (2, 5, 5)))

    def test_constant_disparity_diagonals(self):
        w, d = 8, 3
        occ = np.zeros((1, w), bool)
        occ[:, :d] = True
        m_rl, m_lr = synthetic.analytic_attention(np.full((1, w), d), occ)
        np.testing.assert_array_equal(m_rl[0, d:], np.eye(w, k=-d)[d:])
        np.testing.assert_array_equal(m_lr[0, : w - d], np.eye(w, k=d)[: w - d])
        np.testing.assert_allclose(m_rl[0, :d], 1 / w)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31))
    def test_cycle_probability_by_brute_force(self, seed):
        scene = synthetic.render_scene(synthetic.random_spec(np.random.default_rng(seed), width=24, height=4))
        maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
        p = reference.cycle_probability(*maps)
        w = scene.occ_l.shape[1]
        assert np.all(np.abs(p[~scene.occ_l] - 1) <= 1e-6)
        assert np.all(p[scene.occ_l] <= 1 / w + 1e-6)
        np.testing.assert_allclose(occlusion.cycle_probability(maps), p, atol=1e-6)

    def test_out_of_range_rejected(self):
        with pytest.raises(SceneError):
            synthetic.analytic_attention(np.full((1, 4), 2), np.zeros((1, 4), bool))


class TestDisparityWarp:
    def test_zero_disparity(self, rng):
        right = rng.random((3, 7, 3)).astype(np.float32)
        np.testing.assert_array_equal(
            synthetic.disparity_warp(right, np.zeros((3, 7)), np.zeros((3, 7), bool)), right)

    def test_constant_image(self):
        scene = synthetic.render_scene(synthetic.two_object_spec())
        out = synthetic.disparity_warp(np.full((32, 96, 3), 0.3), scene.disparity_l, scene.occ_l, fill=0.3)
        np.testing.assert_allclose(out, 0.3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_equals_attention_conversion(self, seed):
        scene = scene_from_seed(seed)
        maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
        got = bipam.convert_features(maps.m_rl, scene.pair.right)
        want = synthetic.disparity_warp(scene.pair.right, scene.disparity_l, scene.occ_l)
        vis = ~scene.occ_l
        assert np.max(np.abs(got - want)[vis], initial=0) <= 1e-6

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31))
    def test_fusion_within_convex_bound(self, seed):
        scene = scene_from_seed(seed)
        maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
        v_l, _ = occlusion.detect_occlusions(maps)
        conv = bipam.convert_features(maps.m_rl, scene.pair.right)
        fused = bipam.fuse_with_mask(conv, scene.pair.left, v_l)
        lo = np.minimum(conv, scene.pair.left) - 1e-6
        hi = np.maximum(conv, scene.pair.left) + 1e-6
        assert np.all((fused >= lo) & (fused <= hi))


class TestSpecText:
    def test_roundtrip(self):
        spec = synthetic.two_object_spec()
        assert synthetic.parse_spec(synthetic.format_spec(spec)) == spec

    def test_parse_with_comments(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text("# toy\nwidth = 40\nheight=8\nlayer = 10,1,6,4,3,stripes,2  # near\n"
                        "right_gain = 0.9\n", encoding="utf-8")
        spec = synthetic.load_spec(path)
        assert spec.width == 40 and spec.right_gain == 0.9
        assert spec.layers == (Layer(10, 1, 6, 4, 3, "stripes", 2),)

    @pytest.mark.parametrize("text", ["width = 8\n", "width=8\nheight=4\ncolour=red\n",
                                      "width=8\nheight=4\nlayer=1,2,3\n", "width=x\nheight=4\n",
                                      "width=8\nheight=4\nlayer=6,0,4,2,1,noise,0\n"])
    def test_errors(self, text):
        with pytest.raises(SceneError):
            synthetic.parse_spec(text)
