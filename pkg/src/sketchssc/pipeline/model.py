"""Two-stage sketch-aware completion network.

Stage 1 maps the TSDF volume to two-class sketch logits. The hallucination
module refines that sketch. Stage 2 lifts frozen 2D image features into the
grid, adds learned mappings of both sketches, and predicts semantic logits
with a 3D network of the same layout as stage 1.
"""

import numpy as np

from ..cvae import PosteriorEncoder, SketchDecoder
from ..nn import functional as F
from ..nn.layers import BatchNorm, Conv2d, Conv3d, DDRBlock, DdrBlockConfig, Deconv3d, Module
from ..nn.tensor import Tensor, as_tensor, no_grad, relu, softmax
from ..projection import FeatureVolume, project_features
from ..voxel import GridSpec
from .config import ModelConfig, StageSpec


class ConvBlock(Module):
    def __init__(self, cin, cout, kernel, dilation, batch_norm, rng):
        super().__init__()
        self.conv = Conv3d(cin, cout, kernel, dilation=dilation, rng=rng)
        self.bn = BatchNorm(cout) if batch_norm else None

    def forward(self, x):
        h = self.conv(x)
        return relu(self.bn(h) if self.bn is not None else h)


class DeconvBlock(Module):
    def __init__(self, cin, cout, kernel, rate, batch_norm, rng):
        super().__init__()
        self.deconv = Deconv3d(cin, cout, kernel, rate, rng=rng)
        self.bn = BatchNorm(cout) if batch_norm else None

    def forward(self, x):
        h = self.deconv(x)
        return relu(self.bn(h) if self.bn is not None else h)


class StageNet(Module):
    """Convs, DDR blocks and deconvs per a :class:`StageSpec`, then a 1x1x1 head."""

    def __init__(self, in_channels, out_channels, spec: StageSpec, rng):
        super().__init__()
        self.spec = spec
        c = spec.channels
        layers, prev = [], in_channels
        for layer in spec.layers:
            if layer.type == "conv":
                layers.append(ConvBlock(prev, c, layer.kernel, layer.dilation, spec.batch_norm, rng))
            elif layer.type == "ddr":
                cfg = DdrBlockConfig(prev, c, spec.bottleneck, layer.dilation, layer.downsample)
                layers.append(DDRBlock(cfg, rng=rng))
            else:
                layers.append(DeconvBlock(prev, c, layer.kernel, layer.upsample, spec.batch_norm, rng))
            prev = c
        self.layers = layers
        self.head = Conv3d(c, out_channels, 1, rng=rng)

    def forward(self, x):
        pairs = self.spec.skip or ()
        saved = {}
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            for a, b in pairs:
                if i == a:
                    saved[a] = h
                if i == b:
                    h = h + saved[a]
        return self.head(h)


class ImageEncoder(Module):
    """Frozen 2D feature extractor standing in for a pretrained backbone.

    3x3 conv + ReLU layers, then a 1x1 channel-reduction conv with batch norm
    (eval mode) and ReLU. Stride 1 keeps features aligned with the depth map.
    """

    def __init__(self, hidden, out_channels, rng):
        super().__init__()
        convs, prev = [], 3
        for h in hidden:
            convs.append(Conv2d(prev, h, 3, rng=rng))
            prev = h
        self.convs = convs
        self.reduce = Conv2d(prev, out_channels, 1, rng=rng)
        self.bn = BatchNorm(out_channels)
        self.freeze()

    def forward(self, rgb):
        """``rgb`` (H, W, 3) in [0, 1] -> features (H, W, C) as a numpy array."""
        x = Tensor(np.moveaxis(np.asarray(rgb, dtype=np.float64), -1, 0)[None])
        with no_grad():
            for conv in self.convs:
                x = relu(conv(x))
            bn = self.bn
            x = relu(F.batch_norm(self.reduce(x), bn.gamma, bn.beta, bn.buffers["running_mean"],
                                  bn.buffers["running_var"], training=False))
        return np.moveaxis(x.data[0], 0, -1)


class SSCModel(Module):
    """All trainable pieces of one model variant."""

    def __init__(self, cfg: ModelConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.feature_channels
        self.image_encoder = ImageEncoder(
            cfg.encoder2d.hidden, c, np.random.default_rng(seed + cfg.encoder2d.seed_offset))
        self.stage1 = StageNet(1, 2, cfg.stage1, rng) if cfg.two_stage else None
        self.prior_raw = Conv3d(2, c, 3, rng=rng) if cfg.two_stage else None
        if cfg.use_cvae:
            h = cfg.hallucination
            self.posterior = PosteriorEncoder(h.latent_dim, h.channels, rng=rng)
            self.decoder = SketchDecoder(h.latent_dim, h.channels, rng=rng)
            self.prior_refined = Conv3d(2, c, 3, rng=rng)
        else:
            self.posterior = self.decoder = self.prior_refined = None
        self.stage2 = StageNet(c, cfg.num_classes, cfg.stage2, rng)

    def project(self, rgb, depth, camera, spec):
        """F_proj for one view as ``(C, nx, ny, nz)``."""
        feats = self.image_encoder(rgb)
        return project_features(feats, depth, camera, spec).channels_first()


def _batched(x, ndim):
    x = as_tensor(x)
    return x if x.ndim == ndim else x.reshape((1,) + x.shape)


def stage1_forward(tsdf, model: SSCModel):
    """TSDF ``(N, 1, nx, ny, nz)`` (or a single volume) -> sketch logits ``(N, 2, ...)``."""
    if model.stage1 is None:
        raise ValueError("model has no sketch stage")
    values = getattr(tsdf, "values", tsdf)
    x = np.asarray(values.data if isinstance(values, Tensor) else values, dtype=np.float64)
    if x.ndim == 3:
        x = x[None, None]
    if x.shape[2:] != model.cfg.grid_dims:
        raise ValueError(f"TSDF dims {x.shape[2:]} do not match model grid {model.cfg.grid_dims}")
    return model.stage1(Tensor(x))


def fuse_priors(f_proj, g_raw, g_refined, params):
    """``F_proj + Conv_raw(g_raw) + Conv_refined(g_refined)``.

    ``params`` is ``(conv_raw, conv_refined)``; either sketch may be None to
    drop its branch.
    """
    conv_raw, conv_refined = params
    if isinstance(f_proj, FeatureVolume):
        f_proj = f_proj.channels_first()[None]
    out = _batched(f_proj, 5)
    for g, conv in ((g_raw, conv_raw), (g_refined, conv_refined)):
        if g is None or conv is None:
            continue
        g = _batched(g, 5)
        if g.shape[0] != out.shape[0] or g.shape[2:] != out.shape[2:]:
            raise ValueError(f"sketch {g.shape} and feature volume {out.shape} disagree")
        mapped = conv(g)
        if mapped.shape != out.shape:
            raise ValueError(f"prior mapping gives {mapped.shape}, features are {out.shape}")
        out = out + mapped
    return out


def semantic_logits(f_proj, g_raw, g_refined, model: SSCModel):
    fused = fuse_priors(f_proj, g_raw, g_refined, (model.prior_raw, model.prior_refined))
    return model.stage2(fused)


def stage2_forward(rgb, depth, camera, g_raw, g_refined, model: SSCModel, spec=None):
    """Single view: image features lifted to the grid, fused with the sketches, 3D network."""
    spec = spec if spec is not None else GridSpec(model.cfg.grid_dims, 1.0)
    if spec.dims != model.cfg.grid_dims:
        raise ValueError(f"grid {spec.dims} does not match model grid {model.cfg.grid_dims}")
    f_proj = model.project(rgb, depth, camera, spec)[None]
    return semantic_logits(f_proj, g_raw, g_refined, model)


def sketch_probabilities(logits):
    return softmax(logits, axis=1)
