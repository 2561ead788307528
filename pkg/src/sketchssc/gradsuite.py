"""Registry of finite-difference checks for every differentiable operation.

Each entry builds randomized toy inputs from an rng and returns the worst
relative error between backprop and central differences. The command-line
``grad-check`` runs them all; tests can swap an entry to probe the harness.
"""

from collections import OrderedDict
from dataclasses import replace

import numpy as np

from . import cvae
from .nn import functional as F
from .nn.gradcheck import check_gradients, param
from .nn.layers import DDRBlock, DdrBlockConfig
from .nn.tensor import Tensor, softmax
from .voxel import IGNORE, GridSpec

TOLERANCE = 1e-4
TOY_DIMS = (8, 8, 8)


def _targets(rng, shape, classes, ignore_frac=0.1):
    t = rng.integers(0, classes, size=shape).astype(np.uint8)
    t[rng.random(shape) < ignore_frac] = IGNORE
    return t


def _jitter(*modules, rng, scale=0.1):
    """Perturb every parameter so that no pre-activation sits exactly on a
    ReLU kink (zero-initialized biases on zero inputs would)."""
    for m in modules:
        for p in m.parameters():
            p.data += rng.normal(0.0, scale, size=p.shape)


# Whole networks hold thousands of ReLUs. Probes start with a wide step, which
# keeps rounding low, and narrow it only where the step straddles a kink.
NETWORK_EPS = (1e-5, 1e-6, 1e-7, 1e-8)


def _check_model_params(fn, module, rng, max_coords=6):
    # Deep weights of a voxel-averaged loss can have gradients near 1e-7,
    # where rounding in the loss swamps the difference quotient; half the
    # probes go to the largest entries so each tensor's error is measured
    # where its gradient carries signal.
    params = module.parameters()
    return check_gradients(fn, params, eps=NETWORK_EPS, max_coords=max_coords, rng=rng,
                           largest=max_coords // 2)


def check_conv3d(rng, ctx):
    x, w, b = param(rng, 2, 3, 5, 4, 6), param(rng, 4, 3, 3, 3, 3), param(rng, 4)
    r = rng.normal(size=(2, 4, 3, 2, 3))
    return check_gradients(lambda: (F.conv3d(x, w, b, stride=2, padding=1) * r).sum(), [x, w, b])


def check_dilated_conv3d(rng, ctx):
    x, w = param(rng, 1, 2, 6, 6, 6), param(rng, 3, 2, 3, 3, 3)
    r = rng.normal(size=(1, 3, 6, 6, 6))
    return check_gradients(lambda: (F.conv3d(x, w, None, padding=2, dilation=2) * r).sum(), [x, w])


def check_deconv3d(rng, ctx):
    x, w, b = param(rng, 2, 3, 3, 2, 3), param(rng, 3, 2, 3, 3, 3), param(rng, 2)
    r = rng.normal(size=(2, 2, 6, 4, 6))
    return check_gradients(lambda: (F.deconv3d(x, w, b, 3, 2) * r).sum(), [x, w, b])


def check_conv2d(rng, ctx):
    x, w, b = param(rng, 1, 3, 5, 6), param(rng, 4, 3, 3, 3), param(rng, 4)
    r = rng.normal(size=(1, 4, 5, 6))
    return check_gradients(lambda: (F.conv2d(x, w, b, padding=1) * r).sum(), [x, w, b])


def check_ddr_block(rng, ctx):
    cfg = DdrBlockConfig(3, 4, 2, dilation=2, downsample_rate=2)
    block = DDRBlock(cfg, rng=rng)
    _jitter(block, rng=rng)
    x = param(rng, 1, 3, 4, 4, 4)
    r = rng.normal(size=(1, 4, 2, 2, 2))
    return check_gradients(lambda: (block(x) * r).sum(), [x] + block.parameters())


def check_batch_norm(rng, ctx):
    x, g, b = param(rng, 3, 2, 2, 3, 2), param(rng, 2), param(rng, 2)
    mean, var = np.zeros(2), np.ones(2)
    r = rng.normal(size=x.shape)
    return check_gradients(
        lambda: (F.batch_norm(x, g, b, mean, var, training=True) * r).sum(), [x, g, b])


def check_linear(rng, ctx):
    x, w, b = param(rng, 3, 5), param(rng, 4, 5), param(rng, 4)
    r = rng.normal(size=(3, 4))
    return check_gradients(lambda: (F.linear(x, w, b) * r).sum(), [x, w, b])


def check_cross_entropy(rng, ctx):
    logits = param(rng, 2, 4, 3, 3, 2)
    t = _targets(rng, (2, 3, 3, 2), 4)
    w = rng.uniform(0.5, 2.0, size=4)
    return check_gradients(lambda: F.softmax_cross_entropy(logits, t, IGNORE, w), [logits])


def check_kl(rng, ctx):
    m, lv = param(rng, 3, 5), param(rng, 3, 5, scale=0.5)
    return check_gradients(lambda: cvae.kl_standard_normal(cvae.GaussianParams(m, lv)), [m, lv])


def _hallucination_setup(rng):
    hc = cvae.HallucinationConfig(latent_dim=3, K=2, channels=3)
    enc = cvae.PosteriorEncoder(hc.latent_dim, hc.channels, rng=rng)
    dec = cvae.SketchDecoder(hc.latent_dim, hc.channels, rng=rng)
    logits = param(rng, 2, 2, 4, 4, 4)
    gt = _targets(rng, (2, 4, 4, 4), 2)
    _jitter(enc, dec, rng=rng)
    return hc, enc, dec, logits, gt


def check_loss_cvae(rng, ctx):
    hc, enc, dec, logits, gt = _hallucination_setup(rng)
    noise = rng.standard_normal((hc.K, 2, hc.latent_dim))
    fn = lambda: cvae.loss_cvae(gt, softmax(logits, axis=1), enc, dec, hc, noise=noise)
    return check_gradients(fn, [logits] + enc.parameters() + dec.parameters(),
                           eps=NETWORK_EPS, max_coords=8, rng=rng)


def check_loss_gsnn(rng, ctx):
    hc, enc, dec, logits, gt = _hallucination_setup(rng)
    noise = rng.standard_normal((hc.K, 2, hc.latent_dim))
    fn = lambda: cvae.loss_gsnn(gt, softmax(logits, axis=1), dec, hc, noise=noise)
    return check_gradients(fn, [logits] + dec.parameters(), eps=NETWORK_EPS, max_coords=8, rng=rng)


def check_loss_hybrid(rng, ctx):
    hc, enc, dec, logits, gt = _hallucination_setup(rng)
    nc = rng.standard_normal((hc.K, 2, hc.latent_dim))
    ng = rng.standard_normal((hc.K, 2, hc.latent_dim))
    fn = lambda: cvae.loss_hybrid(gt, softmax(logits, axis=1), enc, dec, hc,
                                  noise_cvae=nc, noise_gsnn=ng)
    return check_gradients(fn, [logits] + enc.parameters() + dec.parameters(),
                           eps=NETWORK_EPS, max_coords=8, rng=rng)


def _toy_model(ctx, seed):
    from .pipeline.model import SSCModel

    cfg = replace(ctx["model_cfg"], grid_dims=TOY_DIMS)
    model = SSCModel(cfg, seed=seed)
    _jitter(model, rng=np.random.default_rng(seed))
    return model


def _toy_sample(ctx, seed):
    from .pipeline.synthetic import generate_synthetic_scene

    cfg = ctx["model_cfg"]
    return generate_synthetic_scene(seed, GridSpec(TOY_DIMS, 0.1), cfg.num_classes,
                                    image_size=(16, 12))


def check_fuse_priors(rng, ctx):
    from .nn.layers import Conv3d
    from .pipeline.model import fuse_priors

    c = 3
    convs = (Conv3d(2, c, 3, rng=rng), Conv3d(2, c, 3, rng=rng))
    _jitter(*convs, rng=rng)
    f = param(rng, 1, c, 4, 4, 4)
    gr, gf = param(rng, 1, 2, 4, 4, 4), param(rng, 1, 2, 4, 4, 4)
    r = rng.normal(size=(1, c, 4, 4, 4))
    params = [f, gr, gf] + convs[0].parameters() + convs[1].parameters()
    return check_gradients(lambda: (fuse_priors(f, gr, gf, convs) * r).sum(), params)


def check_stage1_forward(rng, ctx):
    from .pipeline.model import stage1_forward

    model = _toy_model(ctx, int(rng.integers(1 << 31)))
    if model.stage1 is None:
        return 0.0
    tsdf = rng.uniform(-1, 1, size=(1, 1) + TOY_DIMS)
    r = rng.normal(size=(1, 2) + TOY_DIMS)
    return _check_model_params(lambda: (stage1_forward(tsdf, model) * r).sum(), model.stage1, rng)


def check_stage2_forward(rng, ctx):
    from .pipeline.model import stage2_forward

    seed = int(rng.integers(1 << 31))
    model = _toy_model(ctx, seed)
    s = _toy_sample(ctx, seed % 1000)
    g_raw = param(rng, 1, 2, *TOY_DIMS)
    g_ref = param(rng, 1, 2, *TOY_DIMS) if model.prior_refined is not None else None
    r = rng.normal(size=(1, model.cfg.num_classes) + TOY_DIMS)
    fn = lambda: (stage2_forward(s.rgb, s.depth, s.camera, g_raw, g_ref, model, s.spec) * r).sum()
    extra = [g_raw] + ([g_ref] if g_ref is not None else [])
    err = check_gradients(fn, extra, eps=NETWORK_EPS, max_coords=10, rng=rng)
    return max(err, _check_model_params(fn, model.stage2, rng))


def check_total_loss(rng, ctx):
    from .pipeline.train import total_loss

    seed = int(rng.integers(1 << 31))
    model = _toy_model(ctx, seed)
    s = _toy_sample(ctx, seed % 1000)
    noise_seed = int(rng.integers(1 << 31))
    fn = lambda: total_loss([s], model, np.random.default_rng(noise_seed), ctx.get("train_cfg"))[0]
    return _check_model_params(fn, model, rng, max_coords=3)


GRAD_CHECKS = OrderedDict([
    ("conv3d", check_conv3d),
    ("conv3d_dilated", check_dilated_conv3d),
    ("deconv3d", check_deconv3d),
    ("conv2d", check_conv2d),
    ("ddr_block", check_ddr_block),
    ("batch_norm", check_batch_norm),
    ("linear", check_linear),
    ("cross_entropy", check_cross_entropy),
    ("kl_standard_normal", check_kl),
    ("loss_cvae", check_loss_cvae),
    ("loss_gsnn", check_loss_gsnn),
    ("loss_hybrid", check_loss_hybrid),
    ("fuse_priors", check_fuse_priors),
    ("stage1_forward", check_stage1_forward),
    ("stage2_forward", check_stage2_forward),
    ("total_loss", check_total_loss),
])


def run_grad_checks(model_cfg, train_cfg=None, seed=0, checks=None, tolerance=TOLERANCE):
    """Run every registered check; returns ``[(name, max_rel_error, passed)]``."""
    checks = GRAD_CHECKS if checks is None else checks
    ctx = {"model_cfg": model_cfg, "train_cfg": train_cfg}
    results = []
    for i, (name, fn) in enumerate(checks.items()):
        rng = np.random.default_rng([seed, i])
        try:
            err = float(fn(rng, ctx))
        except Exception as exc:  # a crashing check is a failed check
            results.append((name, float("inf"), False, f"{type(exc).__name__}: {exc}"))
            continue
        results.append((name, err, bool(err < tolerance), ""))
    return results
