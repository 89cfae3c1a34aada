import numpy as np
import pytest

from crosstouch.generative import (
    BubbleNormStats,
    DenoiserModel,
    DiffusionConfig,
    channel_average,
    guide,
    postprocess_bubble,
    q_sample,
    renormalize,
    sample,
    tile_channels,
    to_depth_mm,
    train_denoiser,
)


class TestConfig:
    def test_paper_inference_defaults(self):
        cfg = DiffusionConfig()
        assert cfg.sample_steps == 200
        assert cfg.guidance_scale == 2.54

    def test_invalid_schedules_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            DiffusionConfig(beta_start=0.5, beta_end=0.1)
        with pytest.raises(ValueError, match="sample_steps"):
            DiffusionConfig(sample_steps=2000)
        with pytest.raises(ValueError, match="guidance"):
            DiffusionConfig(guidance_scale=-1.0)

    def test_degenerate_zero_schedule_allowed(self):
        cfg = DiffusionConfig(beta_start=0.0, beta_end=0.0, train_steps=10, sample_steps=5)
        np.testing.assert_array_equal(cfg.alpha_bar(), np.ones(10))


class TestQSample:
    def test_zero_beta_returns_x0(self):
        cfg = DiffusionConfig(beta_start=0.0, beta_end=0.0, train_steps=10, sample_steps=5)
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((2, 3, 4, 4))
        eps = rng.standard_normal((2, 3, 4, 4))
        np.testing.assert_array_equal(q_sample(x0, 7, eps, cfg.alpha_bar()), x0)

    def test_zero_eps_scales_x0(self):
        cfg = DiffusionConfig()
        ab = cfg.alpha_bar()
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal((1, 1, 4, 4))
        t = 600
        out = q_sample(x0, t, np.zeros_like(x0), ab)
        np.testing.assert_allclose(out, np.sqrt(ab[t - 1]) * x0, atol=1e-12)

    def test_t_out_of_range(self):
        cfg = DiffusionConfig()
        x = np.zeros((1, 1, 2, 2))
        with pytest.raises(ValueError, match="within"):
            q_sample(x, 0, x, cfg.alpha_bar())
        with pytest.raises(ValueError, match="within"):
            q_sample(x, 1001, x, cfg.alpha_bar())

    def test_monte_carlo_closed_form(self):
        # empirical mean -> sqrt(abar_t) x0 and variance -> 1 - abar_t at 1e5 draws
        cfg = DiffusionConfig()
        ab = cfg.alpha_bar()
        rng = np.random.default_rng(2)
        x0 = np.array([[0.7, -0.3], [0.1, 0.9]])
        t = 500
        n = 100_000
        eps = rng.standard_normal((n, 2, 2))
        xt = q_sample(np.broadcast_to(x0, (n, 2, 2)), np.full(n, t), eps, ab)
        mean = xt.mean(axis=0)
        var = xt.var(axis=0)
        np.testing.assert_allclose(mean, np.sqrt(ab[t - 1]) * x0, atol=0.01 * 1.0)
        np.testing.assert_allclose(var, (1 - ab[t - 1]) * np.ones((2, 2)), rtol=0.01 * 2.5)

    def test_per_sample_t_vector(self):
        cfg = DiffusionConfig()
        ab = cfg.alpha_bar()
        x0 = np.ones((3, 1, 2, 2))
        out = q_sample(x0, [1, 500, 1000], np.zeros_like(x0), ab)
        for i, t in enumerate([1, 500, 1000]):
            np.testing.assert_allclose(out[i], np.sqrt(ab[t - 1]), atol=1e-12)


class TestGuidance:
    def test_identity_scales_bit_exact(self):
        rng = np.random.default_rng(3)
        ec = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        eu = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        assert guide(ec, eu, 1.0) is ec
        assert guide(ec, eu, 0.0) is eu

    def test_interpolation_formula(self):
        ec = np.array([2.0])
        eu = np.array([1.0])
        np.testing.assert_allclose(guide(ec, eu, 2.54), [1.0 + 2.54 * 1.0], atol=1e-15)


def _tiny_pairs(n=12, size=16, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        cond = rng.uniform(-1, 1, (channels, size, size)).astype(np.float32)
        target = np.clip(cond * 0.5, -1, 1).astype(np.float32)
        pairs.append((cond, target))
    return pairs


def _fast_cfg(**kw):
    defaults = dict(train_steps=50, sample_steps=10, epochs=1, batch_size=4, lr=1e-3, base_width=8)
    defaults.update(kw)
    return DiffusionConfig(**defaults)


class TestTrainSample:
    def test_zero_epochs_returns_initialized_model(self):
        pairs = _tiny_pairs()
        m1, logs = train_denoiser(pairs, _fast_cfg(epochs=0), seed=1)
        m2, _ = train_denoiser(pairs, _fast_cfg(epochs=0), seed=1)
        assert logs == []
        for (_, a), (_, b) in zip(m1.net.named_params(), m2.net.named_params()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_sampling_deterministic_and_clamped(self):
        pairs = _tiny_pairs()
        model, _ = train_denoiser(pairs, _fast_cfg(), seed=1)
        cond = pairs[0][0][None]
        a = sample(model, cond, seed=5)
        b = sample(model, cond, seed=5)
        np.testing.assert_array_equal(a, b)
        c = sample(model, cond, seed=6)
        assert (a != c).any()
        assert a.min() >= -1.0 and a.max() <= 1.0

    def test_degenerate_schedule_no_stochastic_term(self):
        pairs = _tiny_pairs()
        cfg = _fast_cfg(beta_start=0.0, beta_end=0.0)
        model, _ = train_denoiser(pairs, cfg, seed=1)
        out = sample(model, pairs[0][0][None], config=cfg, seed=7)
        # with abar == 1 the trajectory is x0 = clip(initial draw): fully
        # deterministic, no posterior noise enters
        rng = np.random.default_rng(7)
        x_init = rng.standard_normal(out.shape).astype(np.float32)
        np.testing.assert_array_equal(out, np.clip(x_init, -1, 1))

    def test_training_reduces_heldout_mse(self):
        pairs = _tiny_pairs(n=24)
        train, held = pairs[:16], pairs[16:]
        cfg = _fast_cfg(epochs=12, train_steps=50)
        model0, _ = train_denoiser(train, _fast_cfg(epochs=0), seed=2)
        model, _ = train_denoiser(train, cfg, seed=2)

        def heldout_mse(m):
            from crosstouch.nn import Tensor, no_grad

            rng = np.random.default_rng(9)
            ab = cfg.alpha_bar()
            total = 0.0
            for cond, target in held:
                t = int(rng.integers(1, cfg.train_steps + 1))
                eps = rng.standard_normal(target.shape).astype(np.float32)
                xt = q_sample(target[None], t, eps[None], ab).astype(np.float32)
                with no_grad():
                    pred = m.net(Tensor(xt), Tensor(cond[None]), np.array([t]))
                total += float(((pred.data[0] - eps) ** 2).mean())
            return total / len(held)

        assert heldout_mse(model) < heldout_mse(model0)

    def test_unconditional_when_drop_prob_one(self):
        from scipy import stats as sstats

        pairs = _tiny_pairs(n=16)
        cfg = _fast_cfg(epochs=6, cond_drop_prob=1.0, sample_steps=10)
        model, _ = train_denoiser(pairs, cfg, seed=3)
        conds = np.stack([p[0] for p in pairs])
        guided = sample(model, conds, config=_fast_cfg(guidance_scale=2.54, cond_drop_prob=1.0), seed=11)
        unguided = sample(model, conds, config=_fast_cfg(guidance_scale=0.0, cond_drop_prob=1.0), seed=11)
        g_means = guided.mean(axis=(1, 2, 3))
        u_means = unguided.mean(axis=(1, 2, 3))
        _, p = sstats.ks_2samp(g_means, u_means)
        assert p > 0.01

    def test_checkpoint_round_trip(self, tmp_path):
        pairs = _tiny_pairs()
        model, _ = train_denoiser(pairs, _fast_cfg(), seed=1, extra={"src_sensor": "x"})
        path = tmp_path / "den.ct"
        model.save(path)
        loaded = DenoiserModel.load(path)
        assert loaded.config == model.config
        assert loaded.extra["src_sensor"] == "x"
        assert loaded.net.cond_kind == model.net.cond_kind
        a = sample(model, pairs[0][0][None], seed=4)
        b = sample(loaded, pairs[0][0][None], seed=4)
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestPostprocess:
    def test_channel_average_requires_three(self):
        with pytest.raises(ValueError, match="3-channel"):
            channel_average(np.zeros((1, 4, 4)))
        img = np.stack([np.full((4, 4), v) for v in (0.1, 0.2, 0.3)])
        np.testing.assert_allclose(channel_average(img), np.full((4, 4), 0.2), atol=1e-7)

    def test_identity_when_stats_match(self):
        stats = BubbleNormStats(depth_min=56.0, depth_max=60.0, gen_mean=0.3, gen_std=0.9,
                                gt_mean=0.3, gt_std=0.9)
        img = np.random.default_rng(0).uniform(-1, 1, (3, 8, 8))
        out = postprocess_bubble(img, stats)
        expected = to_depth_mm(channel_average(img), 56.0, 60.0)
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_negative_one_maps_to_depth_min(self):
        np.testing.assert_allclose(to_depth_mm(np.full((4, 4), -1.0), 56.0, 60.0), 56.0)
        np.testing.assert_allclose(to_depth_mm(np.full((4, 4), 1.0), 56.0, 60.0), 60.0)

    def test_hand_computed_affine_shift(self):
        stats = BubbleNormStats(depth_min=0.0, depth_max=1.0, gen_mean=0.1, gen_std=0.9,
                                gt_mean=0.0, gt_std=1.0)
        out = renormalize(np.array([0.1]), stats)
        np.testing.assert_allclose(out, [0.0], atol=1e-12)

    def test_renormalize_moves_moments_exactly(self):
        rng = np.random.default_rng(1)
        gen = rng.uniform(50, 60, (20, 8, 8))
        stats = BubbleNormStats(depth_min=50.0, depth_max=60.0,
                                gen_mean=float(gen.mean()), gen_std=float(gen.std()),
                                gt_mean=55.0, gt_std=2.0)
        out = renormalize(gen, stats)
        assert abs(out.mean() - 55.0) < 1e-9
        assert abs(out.std() - 2.0) < 1e-9

    def test_zero_std_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            BubbleNormStats(depth_min=0.0, depth_max=1.0, gen_mean=0.0, gen_std=0.0,
                            gt_mean=0.0, gt_std=1.0)

    def test_stats_json_round_trip(self, tmp_path):
        stats = BubbleNormStats(depth_min=56.0, depth_max=60.0, gen_mean=57.9, gen_std=0.31,
                                gt_mean=58.0, gt_std=0.33)
        path = tmp_path / "stats.json"
        stats.save(path)
        assert BubbleNormStats.load(path) == stats

    def test_tile_channels(self):
        img = np.random.default_rng(2).uniform(-1, 1, (1, 4, 4)).astype(np.float32)
        tiled = tile_channels(img)
        assert tiled.shape == (3, 4, 4)
        np.testing.assert_allclose(channel_average(tiled), img[0], atol=1e-7)
