import numpy as np
import pytest

from ampkin.body import identity_pose
from ampkin.errors import ConfigurationError, InvalidInputError, SchemaError
from ampkin.tokenizer import (
    Codebook,
    MeshTargets,
    TokenizerLossWeights,
    ema_update,
    load_codebook,
    quantize,
    reset_dead_codes,
    save_codebook,
    soft_decode,
    switch_and_decode,
    tokenizer_loss,
)
from oracles import nearest_code_scan, soft_decode_loop


def make_cb(size=8, dim=4, kind="amp", seed=0, scale=1.0):
    return Codebook.random(size, dim, kind, seed=seed, scale=scale)


class TestQuantize:
    def test_nearer_by_inspection(self):
        cb = Codebook(codes=np.array([[0.0, 0.0], [1.0, 1.0]]),
                      usage=np.ones(2), ema_sum=np.zeros((2, 2)), kind="amp")
        indices, z_tilde = quantize(np.array([[0.1, 0.2]]), cb)
        assert indices.tolist() == [0]
        assert np.array_equal(z_tilde, [[0.0, 0.0]])

    def test_exact_code_hit(self):
        cb = make_cb(size=8, dim=4)
        z = cb.codes[3:4].copy()
        indices, z_tilde = quantize(z, cb)
        assert indices.tolist() == [3]
        assert np.array_equal(z_tilde[0], cb.codes[3])
        assert np.linalg.norm(z[0] - z_tilde[0]) == 0.0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(9)
        cb = make_cb(size=256, dim=64, seed=1)
        z = rng.normal(size=(500, 64))
        indices, _ = quantize(z, cb)
        assert np.array_equal(indices, nearest_code_scan(z, cb.codes))

    def test_tie_breaks_to_lowest(self):
        codes = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        cb = Codebook(codes=codes, usage=np.ones(3), ema_sum=codes.copy(), kind="amp")
        indices, _ = quantize(np.array([[0.0, 0.0]]), cb)
        assert indices.tolist() == [0]

    def test_minimality(self):
        rng = np.random.default_rng(10)
        cb = make_cb(size=16, dim=8, seed=2)
        z = rng.normal(size=(40, 8))
        indices, z_tilde = quantize(z, cb)
        for i in range(z.shape[0]):
            chosen = np.linalg.norm(z[i] - z_tilde[i])
            for m in range(cb.size):
                assert chosen <= np.linalg.norm(z[i] - cb.codes[m]) + 1e-12


class TestSoftDecode:
    def test_uniform_logits_give_mean(self):
        cb = make_cb(size=8, dim=4)
        out = soft_decode(np.zeros((3, 8)), cb)
        assert np.abs(out - cb.codes.mean(axis=0)).max() <= 1e-12

    def test_saturated_logit_selects_code(self):
        cb = make_cb(size=8, dim=4)
        logits = np.zeros((1, 8))
        logits[0, 5] = 1e6
        out = soft_decode(logits, cb)
        assert np.abs(out[0] - cb.codes[5]).max() <= 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        cb = make_cb(size=12, dim=6, seed=3)
        logits = rng.normal(size=(20, 12))
        assert np.abs(soft_decode(logits, cb) - soft_decode_loop(logits, cb.codes)).max() <= 1e-12

    def test_rows_inside_code_bounding_box(self):
        rng = np.random.default_rng(12)
        cb = make_cb(size=10, dim=5, seed=4)
        out = soft_decode(rng.normal(size=(50, 10)), cb)
        lo, hi = cb.codes.min(axis=0), cb.codes.max(axis=0)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_one_hot_limit_equals_hard_quantization(self):
        rng = np.random.default_rng(13)
        cb = make_cb(size=16, dim=8, seed=5)
        z = rng.normal(size=(30, 8))
        indices, z_tilde = quantize(z, cb)
        logits = np.zeros((30, 16))
        logits[np.arange(30), indices] = 1e6
        assert np.abs(soft_decode(logits, cb) - z_tilde).max() <= 1e-9


class TestSwitching:
    def test_branch_selection(self):
        cb_amp = make_cb(kind="amp", seed=6)
        cb_non = make_cb(kind="non_amp", seed=7)
        logits = np.random.default_rng(14).normal(size=(5, 8))
        _, kind = switch_and_decode(logits, np.array([0, 0, 0, 0]), cb_amp, cb_non)
        assert kind == "non_amp"
        _, kind = switch_and_decode(logits, np.array([1, 0, 0, 0]), cb_amp, cb_non)
        assert kind == "amp"

    def test_identical_codebooks_ignore_branch(self):
        cb_amp = make_cb(kind="amp", seed=8)
        cb_non = Codebook(codes=cb_amp.codes.copy(), usage=cb_amp.usage.copy(),
                          ema_sum=cb_amp.ema_sum.copy(), kind="non_amp")
        logits = np.random.default_rng(15).normal(size=(4, 8))
        a, _ = switch_and_decode(logits, np.array([1, 1, 0, 0]), cb_amp, cb_non)
        b, _ = switch_and_decode(logits, np.array([0, 0, 0, 0]), cb_amp, cb_non)
        assert np.array_equal(a, b)

    def test_depends_only_on_any_bit_set(self):
        cb_amp = make_cb(kind="amp", seed=16)
        cb_non = make_cb(kind="non_amp", seed=17)
        logits = np.random.default_rng(18).normal(size=(6, 8))
        amp_out = soft_decode(logits, cb_amp)
        non_out = soft_decode(logits, cb_non)
        for bits in range(16):
            y = np.array([(bits >> k) & 1 for k in range(4)])
            out, kind = switch_and_decode(logits, y, cb_amp, cb_non)
            if y.sum() > 0:
                assert kind == "amp" and np.array_equal(out, amp_out)
            else:
                assert kind == "non_amp" and np.array_equal(out, non_out)

    def test_mismatched_kinds_rejected(self):
        cb_amp = make_cb(kind="amp", seed=19)
        cb_non = make_cb(kind="non_amp", seed=20)
        logits = np.zeros((2, 8))
        with pytest.raises(ConfigurationError):
            switch_and_decode(logits, np.array([1, 0, 0, 0]), cb_non, cb_amp)


class TestTokenizerLoss:
    def test_zero_at_perfect_reconstruction(self, toy):
        rng = np.random.default_rng(21)
        z = rng.normal(size=(6, 4))
        gt = MeshTargets(vertices=rng.normal(size=(16, 3)),
                         joints3d=rng.normal(size=(24, 3)),
                         pose=identity_pose())
        total, comps = tokenizer_loss(z, z.copy(), recon=gt, gt=gt)
        assert total == 0.0
        assert comps == {"mix": 0.0, "codebook": 0.0, "commitment": 0.0}

    def test_all_ones_residual_sum_convention(self):
        s, d = 7, 5
        z = np.zeros((s, d))
        z_tilde = z - 1.0
        w = TokenizerLossWeights(mix=100.0, codebook=1.0, commitment=1.0)
        total, comps = tokenizer_loss(z, z_tilde, weights=w)
        assert total == 2 * s * d
        assert comps["codebook"] == s * d and comps["commitment"] == s * d

    def test_mean_reduction_option(self):
        z = np.zeros((4, 3))
        total, comps = tokenizer_loss(z, z - 1.0, reduction="mean")
        assert comps["codebook"] == 1.0 and total == 2.0

    def test_weights_scale_components(self):
        rng = np.random.default_rng(22)
        z = rng.normal(size=(3, 4))
        z_tilde = rng.normal(size=(3, 4))
        w = TokenizerLossWeights(mix=100.0, codebook=2.0, commitment=3.0)
        total, comps = tokenizer_loss(z, z_tilde, weights=w)
        assert np.isclose(total, 2.0 * comps["codebook"] + 3.0 * comps["commitment"])

    def test_mix_term_uses_6d_pose_error(self):
        z = np.zeros((2, 2))
        gt = MeshTargets(vertices=np.zeros((4, 3)), joints3d=np.zeros((24, 3)),
                         pose=identity_pose())
        pred_pose = identity_pose()
        pred_pose[1] = np.diag([1.0, -1.0, -1.0])
        recon = MeshTargets(vertices=np.zeros((4, 3)), joints3d=np.zeros((24, 3)),
                            pose=pred_pose)
        total, comps = tokenizer_loss(z, z.copy(), recon=recon, gt=gt,
                                      weights=TokenizerLossWeights(mix=1.0))
        # one joint's second 6D column flips sign: squared diff 4 over 24*6 entries
        assert np.isclose(comps["mix"], 4.0 / 144.0)
        assert total > 0.0

    def test_non_negative(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            total, _ = tokenizer_loss(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
            assert total >= 0.0


class TestEmaUpdate:
    def test_decay_zero_snaps_to_batch_mean(self):
        cb = Codebook(codes=np.array([[5.0, 5.0]]), usage=np.ones(1),
                      ema_sum=np.array([[5.0, 5.0]]), kind="amp")
        v = np.array([1.5, -2.0])
        z = np.tile(v, (6, 1))
        out = ema_update(cb, z, np.zeros(6, dtype=int), gamma=0.0)
        assert np.abs(out.codes[0] - v).max() <= 1e-12

    def test_unassigned_code_unchanged(self):
        cb = make_cb(size=4, dim=3, seed=24)
        z = np.random.default_rng(25).normal(size=(10, 3))
        out = ema_update(cb, z, np.zeros(10, dtype=int), gamma=0.9)
        assert np.array_equal(out.codes[1:], cb.codes[1:])
        assert not np.array_equal(out.codes[0], cb.codes[0])

    def test_geometric_convergence_to_cluster_means(self):
        rng = np.random.default_rng(26)
        m, d, s = 3, 4, 30
        z = rng.normal(size=(s, d))
        idx = rng.integers(0, m, size=s)
        counts = np.bincount(idx, minlength=m).astype(float)
        assert np.all(counts > 0)
        means = np.stack([z[idx == k].mean(axis=0) for k in range(m)])
        codes0 = means + rng.normal(0, 0.7, size=(m, d))
        cb = Codebook(codes=codes0, usage=counts.copy(),
                      ema_sum=codes0 * counts[:, None], kind="amp")
        gamma = 0.99
        e0 = np.linalg.norm(codes0 - means, axis=1)
        for step in range(1, 40):
            cb = ema_update(cb, z, idx, gamma=gamma)
            expect = gamma**step * e0
            got = np.linalg.norm(cb.codes - means, axis=1)
            assert np.allclose(got, expect, rtol=1e-9, atol=1e-12)
        for _ in range(2500):
            cb = ema_update(cb, z, idx, gamma=gamma)
        assert np.linalg.norm(cb.codes - means, axis=1).max() <= 1e-9

    def test_usage_guard_prevents_division(self):
        cb = Codebook(codes=np.array([[1.0, 1.0], [2.0, 2.0]]),
                      usage=np.array([0.0, 1.0]),
                      ema_sum=np.array([[0.0, 0.0], [2.0, 2.0]]), kind="amp")
        z = np.array([[3.0, 3.0]])
        out = ema_update(cb, z, np.array([1]), gamma=0.99)
        assert np.all(np.isfinite(out.codes))
        assert np.array_equal(out.codes[0], [1.0, 1.0])  # dead code untouched

    def test_bad_gamma_rejected(self):
        cb = make_cb()
        with pytest.raises(InvalidInputError):
            ema_update(cb, np.zeros((1, 4)), np.array([0]), gamma=1.0)


class TestResetDeadCodes:
    def test_all_alive_unchanged(self):
        cb = make_cb(size=4, dim=3, seed=27)
        z = np.random.default_rng(28).normal(size=(5, 3))
        out = reset_dead_codes(cb, z, threshold=0.5, seed=0)
        assert np.array_equal(out.codes, cb.codes)
        assert np.array_equal(out.usage, cb.usage)

    def test_single_dead_single_latent(self):
        cb = Codebook(codes=np.array([[9.0, 9.0], [1.0, 1.0]]),
                      usage=np.array([0.0, 1.0]),
                      ema_sum=np.array([[9.0, 9.0], [1.0, 1.0]]), kind="amp")
        z = np.array([[0.25, -0.5]])
        out = reset_dead_codes(cb, z, threshold=0.5, seed=42)
        assert np.array_equal(out.codes[0], z[0])
        assert out.usage[0] == 1.0
        assert np.array_equal(out.codes[1], cb.codes[1])

    def test_deterministic_per_seed(self):
        cb = Codebook(codes=np.zeros((6, 3)), usage=np.zeros(6),
                      ema_sum=np.zeros((6, 3)), kind="non_amp")
        z = np.random.default_rng(29).normal(size=(50, 3))
        a = reset_dead_codes(cb, z, threshold=0.5, seed=7)
        b = reset_dead_codes(cb, z, threshold=0.5, seed=7)
        c = reset_dead_codes(cb, z, threshold=0.5, seed=8)
        assert np.array_equal(a.codes, b.codes)
        assert not np.array_equal(a.codes, c.codes)

    def test_replaces_exactly_subthreshold(self):
        usage = np.array([0.0, 2.0, 0.4, 1.0])
        codes = np.full((4, 2), 9.0)
        cb = Codebook(codes=codes, usage=usage, ema_sum=codes * usage[:, None], kind="amp")
        z = np.random.default_rng(30).normal(size=(20, 2))
        out = reset_dead_codes(cb, z, threshold=0.5, seed=1)
        assert not np.array_equal(out.codes[0], cb.codes[0])
        assert not np.array_equal(out.codes[2], cb.codes[2])
        assert np.array_equal(out.codes[[1, 3]], cb.codes[[1, 3]])
        assert out.usage[0] == 1.0 and out.usage[2] == 1.0
        assert out.usage[1] == 2.0 and out.usage[3] == 1.0


class LinearPoseDecoder:
    """Test-only reference decoder: latent tokens -> per-joint 6D blocks -> pose.

    Mean-pools the token rows, applies a fixed random linear map to 24 x 6
    values, and Gram-Schmidt-decodes each joint block. Stands in for a
    trained decoder so the quantize -> decode -> mesh loop can be exercised
    without any learning.
    """

    def __init__(self, dim, seed=0):
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(scale=0.3, size=(24 * 6, dim))
        bias = np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), 24)
        self.bias = bias + rng.normal(scale=0.05, size=24 * 6)

    def __call__(self, z):
        blocks = (self.weight @ np.asarray(z).mean(axis=0) + self.bias).reshape(24, 6)
        from ampkin.rotations import rot6d_to_matrix

        return rot6d_to_matrix(blocks)


class TestPoseSpaceRoundTrip:
    def test_quantize_decode_mesh_loop(self, small_toy):
        from ampkin.body import forward
        from ampkin.rotations import matrix_to_6d

        rng = np.random.default_rng(33)
        cb = make_cb(size=32, dim=16, seed=34)
        decoder = LinearPoseDecoder(dim=16, seed=35)

        z = rng.normal(size=(8, 16))
        indices, z_tilde = quantize(z, cb)
        pose_from_z = decoder(z)
        pose_from_q = decoder(z_tilde)

        gt_mesh = forward(small_toy, pose_from_z)
        gt = MeshTargets(vertices=gt_mesh.vertices, joints3d=gt_mesh.joints_posed,
                         pose=pose_from_z)
        recon_mesh = forward(small_toy, pose_from_q)
        recon = MeshTargets(vertices=recon_mesh.vertices, joints3d=recon_mesh.joints_posed,
                            pose=pose_from_q)

        total, comps = tokenizer_loss(z, z_tilde, recon=recon, gt=gt)
        assert total > 0.0
        assert comps["mix"] > 0.0
        # quantization residual drives the pose error; identical latents close the loop
        total_perfect, _ = tokenizer_loss(z, z.copy(), recon=gt, gt=gt)
        assert total_perfect == 0.0
        # decoded poses are valid rotations throughout
        assert matrix_to_6d(pose_from_q).shape == (24, 6)


class TestCodebookIO:
    def test_round_trip(self, tmp_path):
        cb = make_cb(size=9, dim=5, kind="non_amp", seed=31)
        path = tmp_path / "cb.bin"
        save_codebook(cb, path)
        loaded = load_codebook(path)
        assert np.array_equal(loaded.codes, cb.codes)
        assert np.array_equal(loaded.usage, cb.usage)
        assert np.array_equal(loaded.ema_sum, cb.ema_sum)
        assert loaded.kind == cb.kind

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"WRONG!!" + b"\x00" * 32)
        with pytest.raises(SchemaError, match="magic"):
            load_codebook(path)

    def test_truncated(self, tmp_path):
        cb = make_cb(size=9, dim=5, seed=32)
        path = tmp_path / "cb.bin"
        save_codebook(cb, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(SchemaError, match="truncated"):
            load_codebook(path)
