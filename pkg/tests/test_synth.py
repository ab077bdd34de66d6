import numpy as np
import pytest

from ampkin.errors import InvalidInputError, SchemaError
from ampkin.synth import (
    HeatmapStack,
    WeakPerspectiveCamera,
    composite_overlay,
    inject_keypoint_noise,
    load_heatmaps,
    load_png,
    project_weak_perspective,
    rasterize_heatmaps,
    save_heatmaps,
    save_png,
    ssim,
    ssim_gate,
)
from oracles import point_in_triangle_raster


class TestProjection:
    def test_origin_maps_to_center(self):
        cam = WeakPerspectiveCamera(scale=1.0)
        px = project_weak_perspective(np.zeros((1, 3)), cam, (256, 192))
        assert np.array_equal(px[0], [128.0, 96.0])

    def test_scale_doubles_distance_from_center(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(scale=0.2, size=(10, 3))
        center = np.array([128.0, 128.0])
        p1 = project_weak_perspective(pts, WeakPerspectiveCamera(scale=0.5), (256, 256))
        p2 = project_weak_perspective(pts, WeakPerspectiveCamera(scale=1.0), (256, 256))
        assert np.allclose(p2 - center, 2.0 * (p1 - center), atol=1e-9)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        cam = WeakPerspectiveCamera(scale=0.9, tx=0.1, ty=-0.3)
        pts = rng.normal(size=(50, 3))
        got = project_weak_perspective(pts, cam, (300, 200))
        for i, (x, y, _) in enumerate(pts):
            u = cam.scale * (x + cam.tx)
            v = cam.scale * (y + cam.ty)
            want = [(u + 1.0) / 2.0 * 300, (v + 1.0) / 2.0 * 200]
            assert np.abs(got[i] - want).max() <= 1e-12

    def test_translation_commutes(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(20, 3))
        w, h = 256, 128
        delta = 0.25
        a = project_weak_perspective(pts, WeakPerspectiveCamera(1.5, 0.0, 0.0), (w, h))
        b = project_weak_perspective(pts, WeakPerspectiveCamera(1.5, delta, delta), (w, h))
        shift = np.array([1.5 * delta * w / 2.0, 1.5 * delta * h / 2.0])
        assert np.abs((b - a) - shift).max() <= 1e-12

    def test_depth_ignored(self):
        cam = WeakPerspectiveCamera(scale=1.0)
        a = project_weak_perspective(np.array([[0.1, 0.2, 0.0]]), cam, (100, 100))
        b = project_weak_perspective(np.array([[0.1, 0.2, 42.0]]), cam, (100, 100))
        assert np.array_equal(a, b)

    def test_bad_scale_rejected(self):
        with pytest.raises(InvalidInputError):
            WeakPerspectiveCamera(scale=0.0)


class TestHeatmaps:
    def test_peak_one_at_keypoint_pixel(self):
        kps = np.array([[20.0, 30.0, 1.0]])
        stack = rasterize_heatmaps(kps, (64, 64), sigma=2.0)
        assert stack.maps[30, 20, 0] == 1.0
        assert stack.maps[:, :, 0].max() == 1.0

    def test_zero_confidence_channel_is_zero(self):
        kps = np.array([[20.0, 30.0, 1.0], [40.0, 10.0, 0.0]])
        stack = rasterize_heatmaps(kps, (64, 64), sigma=2.0)
        assert np.all(stack.maps[:, :, 1] == 0.0)
        assert stack.maps[:, :, 0].max() > 0.0

    def test_peak_at_rounded_pixel(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x, y = rng.uniform(5, 59, size=2)
            stack = rasterize_heatmaps(np.array([[x, y, 1.0]]), (64, 64), sigma=2.0)
            iy, ix = np.unravel_index(np.argmax(stack.maps[:, :, 0]), (64, 64))
            assert ix == int(np.round(x)) and iy == int(np.round(y))

    def test_channel_sum_matches_gaussian_integral(self):
        sigma = 2.0
        stack = rasterize_heatmaps(np.array([[130.0, 120.0, 1.0]]), (256, 256), sigma=sigma)
        total = stack.maps[:, :, 0].sum()
        assert abs(total - 2.0 * np.pi * sigma**2) / (2.0 * np.pi * sigma**2) <= 0.01

    def test_values_bounded(self):
        rng = np.random.default_rng(4)
        kps = np.concatenate([rng.uniform(0, 64, size=(6, 2)), np.ones((6, 1))], axis=1)
        stack = rasterize_heatmaps(kps, (64, 64), sigma=3.0)
        assert stack.maps.max() <= 1.0 and stack.maps.min() >= 0.0

    def test_bad_sigma_rejected(self):
        with pytest.raises(InvalidInputError):
            rasterize_heatmaps(np.zeros((1, 3)), (32, 32), sigma=0.0)


class TestKeypointNoise:
    def _kps(self, rng, n=24):
        kps = np.concatenate([rng.uniform(0, 200, size=(n, 2)), np.ones((n, 1))], axis=1)
        kps[::5, 2] = 0.0  # some excluded keypoints
        return kps

    def test_ratio_zero_unchanged(self):
        rng = np.random.default_rng(5)
        kps = self._kps(rng)
        assert np.array_equal(inject_keypoint_noise(kps, 0.0, 3.0, seed=1), kps)

    def test_zero_sigma_unchanged(self):
        rng = np.random.default_rng(6)
        kps = self._kps(rng)
        assert np.array_equal(inject_keypoint_noise(kps, 1.0, 0.0, seed=1), kps)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(7)
        kps = self._kps(rng)
        a = inject_keypoint_noise(kps, 0.5, 2.0, seed=9)
        b = inject_keypoint_noise(kps, 0.5, 2.0, seed=9)
        c = inject_keypoint_noise(kps, 0.5, 2.0, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_perturbs_exact_count(self):
        rng = np.random.default_rng(8)
        kps = self._kps(rng)
        visible = int(np.sum(kps[:, 2] > 0))
        for ratio in (0.25, 0.5, 0.75, 1.0):
            out = inject_keypoint_noise(kps, ratio, 5.0, seed=11)
            changed = np.any(out[:, :2] != kps[:, :2], axis=1)
            assert changed.sum() == int(np.floor(ratio * visible))

    def test_excluded_never_perturbed(self):
        rng = np.random.default_rng(9)
        kps = self._kps(rng)
        out = inject_keypoint_noise(kps, 1.0, 10.0, seed=12)
        excluded = kps[:, 2] == 0.0
        assert np.array_equal(out[excluded], kps[excluded])

    def test_scale_model_perturbs_all_visible(self):
        rng = np.random.default_rng(10)
        kps = self._kps(rng)
        out = inject_keypoint_noise(kps, 0.5, 4.0, seed=13, model="scale")
        visible = kps[:, 2] > 0
        changed = np.any(out[:, :2] != kps[:, :2], axis=1)
        assert np.array_equal(changed, visible)


class TestSsim:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            img = rng.uniform(size=(24, 31))
            assert ssim(img, img) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(12)
        a = rng.uniform(size=(20, 20))
        b = rng.uniform(size=(20, 20))
        assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12

    def test_constant_pair_closed_form(self):
        p, q = 0.8, 0.25
        a = np.full((16, 16), p)
        b = np.full((16, 16), q)
        c1 = 0.01**2
        expect = (2 * p * q + c1) / (p**2 + q**2 + c1)
        assert abs(ssim(a, b) - expect) <= 1e-10

    def test_range(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            a = rng.uniform(size=(16, 16))
            b = rng.uniform(size=(16, 16))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_gate_threshold(self):
        assert not ssim_gate(0.49)
        assert ssim_gate(0.51)
        assert ssim_gate(0.5)  # only scores below the threshold are excluded

    def test_gate_on_constructed_pairs(self):
        # constant-image pairs straddling the 0.5 threshold, solved by bisection
        c1 = 0.01**2

        def level_for_target(target):
            lo, hi = 0.0, 1.0  # ssim(1, q) decreases as q moves away from 1
            for _ in range(80):
                mid = (lo + hi) / 2.0
                val = (2 * mid + c1) / (1.0 + mid**2 + c1)
                if val > target:
                    hi = mid
                else:
                    lo = mid
            return (lo + hi) / 2.0

        q_below = level_for_target(0.49)
        q_above = level_for_target(0.51)
        ones = np.ones((16, 16))
        s_below = ssim(ones, np.full((16, 16), q_below))
        s_above = ssim(ones, np.full((16, 16), q_above))
        assert s_below < 0.5 < s_above
        assert not ssim_gate(s_below)
        assert ssim_gate(s_above)

    def test_size_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((8, 8)), np.zeros((9, 8)))

    def test_even_window_rejected(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((16, 16)), np.zeros((16, 16)), window=8)


class TestCompositeOverlay:
    def _cam(self):
        return WeakPerspectiveCamera(scale=1.0)

    def test_empty_mesh_leaves_background(self):
        bg = np.random.default_rng(14).uniform(size=(32, 32, 3))
        out = composite_overlay(bg, np.zeros((0, 3)), np.zeros((0, 3), dtype=int), self._cam())
        assert np.array_equal(out, bg)

    def test_mesh_outside_frame_leaves_background(self):
        bg = np.random.default_rng(15).uniform(size=(32, 32, 3))
        verts = np.array([[5.0, 5.0, 0.0], [5.2, 5.0, 0.0], [5.0, 5.2, 0.0]])
        out = composite_overlay(bg, verts, np.array([[0, 1, 2]]), self._cam())
        assert np.array_equal(out, bg)

    def test_single_triangle_matches_half_plane_oracle(self):
        w = h = 32
        bg = np.zeros((h, w, 3))
        # camera maps [-1, 1] to [0, 32]; place a mid-frame triangle
        verts = np.array([
            [-0.5, -0.5, 0.0],
            [0.6, -0.4, 0.0],
            [0.0, 0.7, 0.0],
        ])
        cam = self._cam()
        color = (1.0, 0.0, 0.0)
        out = composite_overlay(bg, verts, np.array([[0, 1, 2]]), cam, color=color)
        from ampkin.synth import project_weak_perspective

        tri = project_weak_perspective(verts, cam, (w, h))
        want = point_in_triangle_raster(tri, w, h)
        got = out[:, :, 0] == 1.0
        assert np.array_equal(got, want)

    def test_z_buffer_keeps_nearer_triangle(self):
        w = h = 16
        bg = np.zeros((h, w, 3))
        near = np.array([[-0.8, -0.8, -1.0], [0.8, -0.8, -1.0], [0.0, 0.8, -1.0]])
        far = near.copy()
        far[:, 2] = 1.0
        verts = np.concatenate([far, near])
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        out_a = composite_overlay(bg, verts, faces, self._cam(), color=(0.2, 0.4, 0.6))
        # reversed face order must not change the result (depth decides)
        out_b = composite_overlay(bg, verts, faces[::-1], self._cam(), color=(0.2, 0.4, 0.6))
        assert np.array_equal(out_a, out_b)

    def test_deterministic(self, small_toy):
        bg = np.full((40, 40, 3), 0.3)
        cam = WeakPerspectiveCamera(scale=0.9, ty=-0.85)
        a = composite_overlay(bg, small_toy.rest_vertices, small_toy.faces, cam)
        b = composite_overlay(bg, small_toy.rest_vertices, small_toy.faces, cam)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, bg)  # the mannequin is visible


class TestImageIO:
    def test_png_round_trip_gray(self, tmp_path):
        rng = np.random.default_rng(16)
        img = np.round(rng.uniform(size=(20, 24)) * 255) / 255.0
        path = tmp_path / "img.png"
        save_png(img, path)
        back = load_png(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 1.0 / 255.0

    def test_png_round_trip_rgb(self, tmp_path):
        rng = np.random.default_rng(17)
        img = np.round(rng.uniform(size=(12, 10, 3)) * 255) / 255.0
        path = tmp_path / "img.png"
        save_png(img, path)
        back = load_png(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 1.0 / 255.0

    def test_heatmap_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        kps = np.concatenate([rng.uniform(0, 32, size=(5, 2)), np.ones((5, 1))], axis=1)
        stack = rasterize_heatmaps(kps, (32, 24), sigma=1.5)
        path = tmp_path / "hm.bin"
        save_heatmaps(stack, path)
        back = load_heatmaps(path)
        assert np.array_equal(back.maps, stack.maps)
        assert back.sigma == stack.sigma

    def test_heatmap_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(SchemaError, match="magic"):
            load_heatmaps(path)
