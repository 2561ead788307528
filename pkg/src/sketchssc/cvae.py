"""Sketch hallucination: a conditional VAE refining the stage-1 sketch.

The posterior encoder sees the ground-truth sketch together with the raw
predicted sketch; the decoder reconstructs the sketch from a latent code and
the raw sketch. Training mixes the CVAE objective with its prior-sampled
(GSNN) variant; inference averages decodes of K prior samples.
"""

from dataclasses import dataclass

import numpy as np

from .nn import functional as F
from .nn.layers import BatchNorm, Conv3d, Linear, Module
from .nn.tensor import Tensor, as_tensor, broadcast_to, concat, exp, log, relu, reshape, softmax
from .voxel import IGNORE


@dataclass(frozen=True)
class HallucinationConfig:
    latent_dim: int = 16
    K: int = 4
    lambda1: float = 2.0
    lambda2: float = 1.0
    alpha: float = 1.5
    threshold: float = 0.5
    channels: int = 8
    average: str = "probs"

    def __post_init__(self):
        if self.K < 1 or self.latent_dim < 1:
            raise ValueError("K and latent_dim must be >= 1")
        if min(self.lambda1, self.lambda2, self.alpha) <= 0:
            raise ValueError("lambda1, lambda2 and alpha must be positive")
        if self.average not in ("probs", "logits"):
            raise ValueError("average must be 'probs' or 'logits'")


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Diagonal Gaussian over the latent code, one row per scene: ``(N, latent_dim)``."""

    mean: Tensor
    logvar: Tensor

    @property
    def sigma(self):
        return np.exp(self.logvar.data / 2.0)


def _gt_channel(g_gt):
    g = np.asarray(g_gt)
    return Tensor((g == 1).astype(np.float64)[:, None])


class PosteriorEncoder(Module):
    """Two strided 3x3x3 convolutions, global average pooling and two linear heads."""

    def __init__(self, latent_dim, channels=8, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = Conv3d(3, channels, 3, stride=2, rng=rng)
        self.conv2 = Conv3d(channels, channels, 3, stride=2, rng=rng)
        self.mean_head = Linear(channels, latent_dim, rng=rng)
        self.logvar_head = Linear(channels, latent_dim, rng=rng)
        self.logvar_head.weight.data *= 0.1

    def forward(self, g_gt, g_raw):
        g_raw = as_tensor(g_raw)
        if np.asarray(g_gt).shape != g_raw.shape[:1] + g_raw.shape[2:]:
            raise ValueError(f"ground-truth sketch {np.shape(g_gt)} and raw sketch "
                             f"{g_raw.shape} disagree")
        x = concat([_gt_channel(g_gt), g_raw], axis=1)
        h = relu(self.conv1(x))
        h = relu(self.conv2(h))
        pooled = F.global_avg_pool(h)
        return GaussianParams(self.mean_head(pooled), self.logvar_head(pooled))


class SketchDecoder(Module):
    """Decodes ``(z, raw sketch)`` into two-class sketch logits.

    ``z`` is broadcast over the grid and concatenated to the raw sketch as
    constant channels before the convolutions. The network output is a
    correction added to the log raw probabilities, so an untrained (or dead)
    branch reproduces the raw sketch instead of a constant.
    """

    eps = 1e-6

    def __init__(self, latent_dim, channels=8, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.latent_dim = latent_dim
        self.fuse = Conv3d(2 + latent_dim, channels, 1, rng=rng)
        self.conv1 = Conv3d(channels, channels, 3, rng=rng)
        self.conv2 = Conv3d(channels, channels, 3, dilation=2, rng=rng)
        self.norms = [BatchNorm(channels) for _ in range(3)]
        self.head = Conv3d(channels, 2, 1, rng=rng)

    def forward(self, z, g_raw):
        z, g_raw = as_tensor(z), as_tensor(g_raw)
        m, spatial = g_raw.shape[0], g_raw.shape[2:]
        if z.shape != (m, self.latent_dim):
            raise ValueError(f"latent shape {z.shape} != {(m, self.latent_dim)}")
        zb = broadcast_to(reshape(z, (m, self.latent_dim) + (1,) * len(spatial)),
                          (m, self.latent_dim) + spatial)
        h = concat([g_raw, zb], axis=1)
        for conv, norm in zip((self.fuse, self.conv1, self.conv2), self.norms):
            h = relu(norm(conv(h)))
        return self.head(h) + log(g_raw + self.eps)


def encode_posterior(g_gt, g_raw, params: PosteriorEncoder):
    return params(g_gt, g_raw)


def sample_latent(p: GaussianParams, noise):
    """Reparameterized draw ``mean + exp(logvar / 2) * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != p.mean.shape[-1]:
        raise ValueError(f"noise width {noise.shape[-1]} != latent_dim {p.mean.shape[-1]}")
    return p.mean + exp(p.logvar * 0.5) * noise


def kl_standard_normal(p: GaussianParams):
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over latent dims, averaged over scenes."""
    per = (p.mean * p.mean + exp(p.logvar) - 1.0 - p.logvar).sum(axis=-1) * 0.5
    return per.mean() if per.ndim else per


def _noise(cfg, n, rng, noise):
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        return rng.standard_normal((cfg.K, n, cfg.latent_dim))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (cfg.K, n, cfg.latent_dim):
        raise ValueError(f"noise shape {noise.shape} != {(cfg.K, n, cfg.latent_dim)}")
    return noise


def _decode_samples(decoder, z, g_raw, k):
    """Decode K latents per scene: ``z`` is ``(K*N, L)``, sample-major.

    Each sample is decoded as its own batch so batch-norm statistics never mix
    samples; a K-sample loss is then exactly the mean of K one-sample losses.
    """
    n = g_raw.shape[0]
    if k == 1:
        return decoder(z, g_raw)
    return concat([decoder(z[i * n:(i + 1) * n], g_raw) for i in range(k)], axis=0)


def _tile_targets(g_gt, k):
    g = np.asarray(g_gt)
    return np.concatenate([g] * k, axis=0) if k > 1 else g


def _sample_ce(logits, g_gt, k, class_weights):
    return F.softmax_cross_entropy(logits, _tile_targets(g_gt, k), IGNORE, class_weights)


def loss_cvae(g_gt, g_raw, encoder, decoder, cfg: HallucinationConfig, rng=None, noise=None,
              class_weights=None):
    """``lambda1 * KL(q || N(0, I)) + lambda2 * mean_k CE(g_gt, decode(z_k, g_raw))``, z_k ~ q."""
    g_raw = as_tensor(g_raw)
    n = g_raw.shape[0]
    post = encoder(g_gt, g_raw)
    eps = _noise(cfg, n, rng, noise)
    z = sample_latent(GaussianParams(reshape(post.mean, (1, n, cfg.latent_dim)),
                                     reshape(post.logvar, (1, n, cfg.latent_dim))), eps)
    logits = _decode_samples(decoder, reshape(z, (cfg.K * n, cfg.latent_dim)), g_raw, cfg.K)
    ce = _sample_ce(logits, g_gt, cfg.K, class_weights)
    return kl_standard_normal(post) * cfg.lambda1 + ce * cfg.lambda2


def gsnn_decode(g_raw, decoder, cfg: HallucinationConfig, rng=None, noise=None):
    """Logits ``(K*N, 2, ...)`` for K standard-normal latents per scene."""
    g_raw = as_tensor(g_raw)
    n = g_raw.shape[0]
    eps = _noise(cfg, n, rng, noise)
    return _decode_samples(decoder, Tensor(eps.reshape(cfg.K * n, cfg.latent_dim)), g_raw, cfg.K)


def average_samples(logits, k, cfg: HallucinationConfig):
    """Average K stacked decodes ``(K*N, 2, ...)`` into refined probabilities ``(N, 2, ...)``."""
    n = logits.shape[0] // k
    if cfg.average == "probs":
        probs = softmax(logits, axis=1)
        return reshape(probs, (k, n) + probs.shape[1:]).mean(axis=0)
    mean_logits = reshape(logits, (k, n) + logits.shape[1:]).mean(axis=0)
    return softmax(mean_logits, axis=1)


def loss_gsnn(g_gt, g_raw, decoder, cfg: HallucinationConfig, rng=None, noise=None,
              class_weights=None):
    """``mean_k CE(g_gt, decode(z_k, g_raw))`` with z_k ~ N(0, I)."""
    logits = gsnn_decode(g_raw, decoder, cfg, rng, noise)
    return _sample_ce(logits, g_gt, cfg.K, class_weights)


def hallucinate(g_gt, g_raw, encoder, decoder, cfg: HallucinationConfig, rng=None,
                noise_cvae=None, noise_gsnn=None, class_weights=None):
    """Training-time pass returning ``(L_CVAE, L_GSNN, refined probabilities)``.

    The refined sketch is the average of the GSNN decodes, matching what
    :func:`infer_refined` produces at test time. CVAE noise is drawn from
    ``rng`` before GSNN noise.
    """
    g_raw = as_tensor(g_raw)
    n = g_raw.shape[0]
    eps_c = _noise(cfg, n, rng, noise_cvae)
    eps_g = _noise(cfg, n, rng, noise_gsnn)
    l_cvae = loss_cvae(g_gt, g_raw, encoder, decoder, cfg, noise=eps_c,
                       class_weights=class_weights)
    logits = gsnn_decode(g_raw, decoder, cfg, noise=eps_g)
    l_gsnn = _sample_ce(logits, g_gt, cfg.K, class_weights)
    return l_cvae, l_gsnn, average_samples(logits, cfg.K, cfg)


def loss_hybrid(g_gt, g_raw, encoder, decoder, cfg: HallucinationConfig, rng=None,
                noise_cvae=None, noise_gsnn=None, class_weights=None, alpha=None):
    """``L_CVAE + alpha * L_GSNN``; ``alpha`` defaults to ``cfg.alpha``."""
    l_cvae, l_gsnn, _ = hallucinate(g_gt, g_raw, encoder, decoder, cfg, rng,
                                    noise_cvae, noise_gsnn, class_weights)
    return l_cvae + l_gsnn * (cfg.alpha if alpha is None else alpha)


def infer_refined(g_raw, decoder, cfg: HallucinationConfig, rng=None, noise=None):
    """Average K prior-sampled decodes; returns ``(probabilities Tensor, binary sketch)``."""
    logits = gsnn_decode(g_raw, decoder, cfg, rng, noise)
    probs = average_samples(logits, cfg.K, cfg)
    return probs, probs.data[:, 1] > cfg.threshold
