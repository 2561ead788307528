import math

import numpy as np
import pytest

from sketchssc import cvae
from sketchssc.cvae import (GaussianParams, HallucinationConfig, PosteriorEncoder, SketchDecoder,
                            encode_posterior, infer_refined, kl_standard_normal, loss_cvae,
                            loss_gsnn, loss_hybrid, sample_latent)
from sketchssc.gradsuite import check_loss_cvae, check_loss_gsnn, check_loss_hybrid
from sketchssc.nn import functional as F
from sketchssc.nn.tensor import Tensor, softmax


def gaussian(mean, logvar):
    return GaussianParams(Tensor(np.asarray(mean, dtype=float)), Tensor(np.asarray(logvar, dtype=float)))


def monte_carlo_kl(mean, logvar, rng, samples=1_000_000):
    """E_q[log q(z) - log p(z)] by sampling q; the Gaussian normalizers cancel."""
    sigma = np.exp(logvar / 2)
    eps = rng.standard_normal((samples, mean.size))
    z = mean + sigma * eps
    log_q = -0.5 * (eps ** 2 + logvar).sum(axis=1)
    log_p = -0.5 * (z ** 2).sum(axis=1)
    return float(np.mean(log_q - log_p))


class ZeroDecoder:
    """Emits uniform logits whatever the inputs: the degenerate decoder."""

    def __call__(self, z, g_raw):
        return Tensor(np.zeros((z.shape[0], 2) + g_raw.shape[2:]))


class ZIgnoringDecoder:
    def __init__(self, logits):
        self.logits = logits

    def __call__(self, z, g_raw):
        reps = z.shape[0] // self.logits.shape[0]
        return Tensor(np.concatenate([self.logits] * reps, axis=0))


def setup(rng, n=2, dims=(4, 4, 4), latent=3, k=4):
    cfg = HallucinationConfig(latent_dim=latent, K=k, channels=4)
    enc = PosteriorEncoder(latent, 4, rng=rng)
    dec = SketchDecoder(latent, 4, rng=rng)
    g_raw = softmax(Tensor(rng.normal(size=(n, 2) + dims)), axis=1)
    g_gt = rng.integers(0, 2, size=(n,) + dims).astype(np.uint8)
    return cfg, enc, dec, g_raw, g_gt


class TestConfig:
    def test_defaults(self):
        cfg = HallucinationConfig()
        assert (cfg.K, cfg.lambda1, cfg.lambda2, cfg.alpha, cfg.threshold) == (4, 2.0, 1.0, 1.5, 0.5)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            HallucinationConfig(K=0)
        with pytest.raises(ValueError):
            HallucinationConfig(alpha=0.0)


class TestPosterior:
    def test_zero_weights_give_standard_normal(self, rng):
        enc = PosteriorEncoder(5, 4, rng=rng)
        for p in enc.parameters():
            p.data[...] = 0.0
        _, _, _, g_raw, g_gt = setup(rng)
        post = encode_posterior(g_gt, g_raw, enc)
        assert not post.mean.data.any() and not post.logvar.data.any()

    @pytest.mark.parametrize("dims", [(4, 4, 4), (8, 4, 12)])
    def test_latent_width_independent_of_grid(self, rng, dims):
        enc = PosteriorEncoder(7, 4, rng=rng)
        _, _, _, g_raw, g_gt = setup(rng, dims=dims)
        post = enc(g_gt, g_raw)
        assert post.mean.shape == (2, 7) and post.logvar.shape == (2, 7)

    def test_shape_mismatch(self, rng):
        _, enc, _, g_raw, _ = setup(rng)
        with pytest.raises(ValueError):
            enc(np.zeros((2, 4, 4, 5)), g_raw)

    def test_gradient(self, rng):
        assert check_loss_cvae(rng, {}) < 1e-4


class TestSampleLatent:
    def test_zero_noise_gives_mean(self):
        p = gaussian([[1.0, -2.0]], [[0.3, -0.1]])
        np.testing.assert_array_equal(sample_latent(p, np.zeros((1, 2))).data, [[1.0, -2.0]])

    def test_standard_params_pass_noise(self, rng):
        noise = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(sample_latent(gaussian(np.zeros((3, 4)), np.zeros((3, 4))), noise).data,
                                      noise)

    def test_empirical_variance(self, rng):
        logvar = np.array([-1.0, 0.0, 0.7])
        p = gaussian(np.array([0.5, -1.0, 2.0]), logvar)
        z = sample_latent(p, rng.standard_normal((100_000, 3))).data
        var = np.exp(logvar)
        # the sample variance of n normals has standard deviation var * sqrt(2 / (n - 1))
        assert np.all(np.abs(z.var(axis=0, ddof=1) - var) < 3 * var * math.sqrt(2 / 99_999))

    def test_noise_width_checked(self):
        with pytest.raises(ValueError):
            sample_latent(gaussian(np.zeros((1, 2)), np.zeros((1, 2))), np.zeros((1, 3)))


class TestKL:
    def test_identical_distributions(self):
        assert kl_standard_normal(gaussian(np.zeros(4), np.zeros(4))).item() == 0.0

    def test_unit_mean_shift(self):
        assert kl_standard_normal(gaussian([1.0, 0.0], [0.0, 0.0])).item() == pytest.approx(0.5)

    def test_nonnegative(self, rng):
        for _ in range(20):
            p = gaussian(rng.normal(size=(2, 5)), rng.normal(size=(2, 5)))
            assert kl_standard_normal(p).item() > 0

    def test_monte_carlo(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            mean, logvar = rng.normal(size=4), rng.uniform(-1, 1, size=4)
            exact = kl_standard_normal(gaussian(mean, logvar)).item()
            assert abs(monte_carlo_kl(mean, logvar, rng, 200_000) - exact) < 0.02 * exact


class TestLosses:
    def test_degenerate_cvae_is_ln2(self, rng):
        cfg, enc, _, g_raw, g_gt = setup(rng)
        for p in enc.parameters():
            p.data[...] = 0.0
        val = loss_cvae(g_gt, g_raw, enc, ZeroDecoder(), cfg, rng=rng).item()
        assert val == pytest.approx(cfg.lambda2 * math.log(2), abs=1e-15)

    def test_k4_is_mean_of_k1(self, rng):
        cfg, enc, dec, g_raw, g_gt = setup(rng)
        noise = rng.standard_normal((4, 2, cfg.latent_dim))
        one = HallucinationConfig(latent_dim=cfg.latent_dim, K=1, channels=4)
        singles = [loss_cvae(g_gt, g_raw, enc, dec, one, noise=noise[k:k + 1]).item() for k in range(4)]
        assert loss_cvae(g_gt, g_raw, enc, dec, cfg, noise=noise).item() == pytest.approx(
            np.mean(singles), abs=1e-12)

    def test_sample_order_invariance(self, rng):
        cfg, enc, dec, g_raw, g_gt = setup(rng)
        noise = rng.standard_normal((4, 2, cfg.latent_dim))
        perm = noise[[2, 0, 3, 1]]
        for fn in (lambda e: loss_cvae(g_gt, g_raw, enc, dec, cfg, noise=e),
                   lambda e: loss_gsnn(g_gt, g_raw, dec, cfg, noise=e)):
            assert fn(noise).item() == pytest.approx(fn(perm).item(), abs=1e-12)

    def test_gsnn_z_independent_decoder(self, rng):
        cfg, _, _, g_raw, g_gt = setup(rng)
        logits = rng.normal(size=(2, 2, 4, 4, 4))
        expect = F.softmax_cross_entropy(logits, g_gt).item()
        assert loss_gsnn(g_gt, g_raw, ZIgnoringDecoder(logits), cfg, rng=rng).item() == pytest.approx(
            expect, abs=1e-12)

    def test_gsnn_reproducible(self, rng):
        cfg, _, dec, g_raw, g_gt = setup(rng)
        a = loss_gsnn(g_gt, g_raw, dec, cfg, rng=np.random.default_rng(3)).item()
        b = loss_gsnn(g_gt, g_raw, dec, cfg, rng=np.random.default_rng(3)).item()
        assert a == b

    def test_gsnn_hand_composed_k2(self, rng):
        cfg, _, dec, g_raw, g_gt = setup(rng, k=2)
        noise = rng.standard_normal((2, 2, cfg.latent_dim))
        parts = [F.softmax_cross_entropy(dec(Tensor(noise[k]), g_raw), g_gt).item() for k in range(2)]
        assert loss_gsnn(g_gt, g_raw, dec, cfg, noise=noise).item() == pytest.approx(
            np.mean(parts), abs=1e-12)

    def test_hybrid_combination(self, rng):
        cfg, enc, dec, g_raw, g_gt = setup(rng)
        nc = rng.standard_normal((4, 2, cfg.latent_dim))
        ng = rng.standard_normal((4, 2, cfg.latent_dim))
        l_c = loss_cvae(g_gt, g_raw, enc, dec, cfg, noise=nc).item()
        l_g = loss_gsnn(g_gt, g_raw, dec, cfg, noise=ng).item()
        hyb = loss_hybrid(g_gt, g_raw, enc, dec, cfg, noise_cvae=nc, noise_gsnn=ng).item()
        assert hyb == l_c + 1.5 * l_g
        assert loss_hybrid(g_gt, g_raw, enc, dec, cfg, noise_cvae=nc, noise_gsnn=ng,
                           alpha=0.0).item() == l_c

    def test_hybrid_of_unit_parts(self, monkeypatch):
        monkeypatch.setattr(cvae, "hallucinate", lambda *a, **k: (Tensor(1.0), Tensor(1.0), None))
        assert loss_hybrid(None, None, None, None, HallucinationConfig()).item() == 2.5

    def test_hybrid_gradient_is_sum(self, rng):
        cfg, enc, dec, g_raw, g_gt = setup(rng)
        nc = rng.standard_normal((4, 2, cfg.latent_dim))
        ng = rng.standard_normal((4, 2, cfg.latent_dim))
        params = enc.parameters() + dec.parameters()

        def grads(fn):
            for p in params:
                p.grad = None
            fn().backward()
            return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

        g_h = grads(lambda: loss_hybrid(g_gt, g_raw, enc, dec, cfg, noise_cvae=nc, noise_gsnn=ng))
        g_c = grads(lambda: loss_cvae(g_gt, g_raw, enc, dec, cfg, noise=nc))
        g_g = grads(lambda: loss_gsnn(g_gt, g_raw, dec, cfg, noise=ng))
        for h, c, g in zip(g_h, g_c, g_g):
            np.testing.assert_allclose(h, c + 1.5 * g, atol=1e-12)

    def test_gradients(self, rng):
        assert check_loss_gsnn(rng, {}) < 1e-4
        assert check_loss_hybrid(rng, {}) < 1e-4


class TestInference:
    def test_z_independent_decoder_reproduces_single_decode(self, rng):
        cfg, _, _, g_raw, _ = setup(rng)
        logits = rng.normal(size=(2, 2, 4, 4, 4))
        probs, binary = infer_refined(g_raw, ZIgnoringDecoder(logits), cfg, rng)
        expect = softmax(Tensor(logits), axis=1).data
        np.testing.assert_allclose(probs.data, expect, atol=1e-14)
        np.testing.assert_array_equal(binary, expect[:, 1] > 0.5)

    def test_probabilities_normalized(self, rng):
        cfg, _, dec, g_raw, _ = setup(rng)
        dec.eval()
        probs, _ = infer_refined(g_raw, dec, cfg, rng)
        assert np.all((probs.data >= 0) & (probs.data <= 1))
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_variance_shrinks_with_k(self, rng):
        _, _, dec, g_raw, _ = setup(rng, latent=2)
        for p in dec.parameters():
            p.data += rng.normal(0, 0.5, size=p.shape)
        dec.eval()

        def spread(k, reps=200):
            cfg = HallucinationConfig(latent_dim=2, K=k, channels=4)
            outs = [infer_refined(g_raw, dec, cfg, rng)[0].data[:, 1] for _ in range(reps)]
            return float(np.mean(np.var(outs, axis=0)))

        ratio = spread(1) / spread(8)
        assert 5.0 < ratio < 12.0  # ideal 8
