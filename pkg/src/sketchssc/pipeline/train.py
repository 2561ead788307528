"""Loss assembly, training loop, prediction and the oracle-sketch ablation."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..cvae import hallucinate, infer_refined
from ..nn import functional as F
from ..nn.optim import SGD, PolySchedule, poly_lr
from ..nn.tensor import Tensor, no_grad
from ..voxel import IGNORE
from .config import ModelConfig, TrainConfig
from .metrics import evaluate, mean_report
from .model import SSCModel, semantic_logits, sketch_probabilities, stage1_forward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Batch:
    tsdf: np.ndarray      # (N, 1, nx, ny, nz)
    f_proj: np.ndarray    # (N, C, nx, ny, nz)
    sketch: np.ndarray    # (N, nx, ny, nz) in {0, 1, IGNORE}
    labels: np.ndarray    # (N, nx, ny, nz)


class FeatureCache:
    """Projected image features per sample; valid because the image encoder is frozen."""

    def __init__(self, model: SSCModel):
        self.model = model
        self._store = {}

    def __call__(self, sample):
        key = id(sample)
        if key not in self._store:
            self._store[key] = (sample, self.model.project(sample.rgb, sample.depth,
                                                           sample.camera, sample.spec))
        return self._store[key][1]


def make_batch(samples, model: SSCModel, cache=None):
    cache = cache if cache is not None else FeatureCache(model)
    for s in samples:
        if s.spec.dims != model.cfg.grid_dims:
            raise ValueError(f"sample grid {s.spec.dims} != model grid {model.cfg.grid_dims}")
    return Batch(
        tsdf=np.stack([np.asarray(s.tsdf.values, dtype=np.float64) for s in samples])[:, None],
        f_proj=np.stack([cache(s) for s in samples]),
        sketch=np.stack([s.sketch_target() for s in samples]),
        labels=np.stack([s.labels.labels for s in samples]),
    )


def sketch_one_hot(mask):
    """Two-channel probabilities of a binary sketch ``(N, ...)`` -> ``(N, 2, ...)``."""
    m = np.asarray(mask) == 1
    return Tensor(np.stack([~m, m], axis=1).astype(np.float64))


def drop_sketch(sketch, drop_rate, rng):
    """Independently clear each positive voxel with probability ``drop_rate``."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError("drop_rate must lie in [0, 1]")
    s = np.asarray(sketch) == 1
    keep = rng.random(s.shape) >= drop_rate
    return s & keep


def forward(model: SSCModel, batch: Batch, rng, training=True, oracle_sketch=None,
            train_cfg: TrainConfig = None):
    """Run the configured variant; returns a dict of outputs and losses.

    With ``oracle_sketch`` (binary ``(N, ...)``) the sketch stage and the
    hallucination module are bypassed and the given sketch feeds both prior
    branches.
    """
    cfg = model.cfg
    sk_w = train_cfg.sketch_class_weights if train_cfg else None
    out = {}
    g_raw = g_refined = None
    if oracle_sketch is not None:
        g_raw = sketch_one_hot(oracle_sketch)
        g_refined = g_raw if model.prior_refined is not None else None
    elif cfg.two_stage:
        logits1 = stage1_forward(batch.tsdf, model)
        out["sketch_logits"] = logits1
        g_raw = sketch_probabilities(logits1)
        if cfg.sketch_prior:
            out["sketch"] = F.softmax_cross_entropy(logits1, batch.sketch, IGNORE, sk_w)
        if cfg.use_cvae:
            h = cfg.hallucination
            if training:
                l_cvae, l_gsnn, g_refined = hallucinate(batch.sketch, g_raw, model.posterior,
                                                        model.decoder, h, rng, class_weights=sk_w)
                out["cvae"], out["gsnn"] = l_cvae, l_gsnn
                out["hybrid"] = l_cvae + l_gsnn * h.alpha
            else:
                g_refined, _ = infer_refined(g_raw, model.decoder, h, rng)
            if cfg.refined_input == "binary":
                g_refined = sketch_one_hot(g_refined.data[:, 1] > h.threshold)
        if not cfg.joint:
            g_raw = g_raw.detach()
            g_refined = g_refined.detach() if g_refined is not None else None
    out["g_raw"], out["g_refined"] = g_raw, g_refined
    logits2 = semantic_logits(batch.f_proj, g_raw, g_refined, model)
    out["semantic_logits"] = logits2
    sem_w = train_cfg.semantic_class_weights if train_cfg else None
    out["semantic"] = F.softmax_cross_entropy(logits2, batch.labels, IGNORE, sem_w)
    return out


def total_loss(samples, model: SSCModel, rng, train_cfg: TrainConfig = None, cache=None,
               oracle_sketch=None):
    """``L_semantic + L_hybrid + L_sketch`` and a float breakdown.

    Terms absent from the model variant count as 0. The breakdown satisfies
    ``semantic + hybrid + sketch == total`` exactly.
    """
    if not isinstance(samples, (list, tuple)):
        samples = [samples]
    batch = make_batch(samples, model, cache)
    out = forward(model, batch, rng, training=True, oracle_sketch=oracle_sketch,
                  train_cfg=train_cfg)
    total = out["semantic"]
    for name in ("hybrid", "sketch"):
        if name in out:
            total = total + out[name]
    parts = {name: (out[name].item() if name in out else 0.0)
             for name in ("semantic", "hybrid", "sketch", "cvae", "gsnn")}
    parts["total"] = total.item()
    return total, parts


def predict(model: SSCModel, samples, rng, cache=None, oracle_sketches=None, batch_size=4):
    """Arg-max semantic labels per sample (eval mode, no graph)."""
    model.eval()
    preds = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            batch = make_batch(chunk, model, cache)
            oracle = None if oracle_sketches is None else np.stack(oracle_sketches[i:i + batch_size])
            out = forward(model, batch, rng, training=False, oracle_sketch=oracle)
            preds.extend(np.argmax(out["semantic_logits"].data, axis=1).astype(np.uint8))
    return preds


def evaluate_model(model: SSCModel, samples, rng, cache=None, oracle_sketches=None):
    preds = predict(model, samples, rng, cache, oracle_sketches)
    return mean_report(evaluate(p, s.labels, s.masks) for p, s in zip(preds, samples))


def run_oracle_ablation(dataset, model: SSCModel, drop_rate, rng, cache=None):
    """Evaluate stage 2 with the ground-truth sketch (randomly thinned) as the prior."""
    sketches = [drop_sketch(s.sketch.mask, drop_rate, rng) for s in dataset]
    return evaluate_model(model, dataset, rng, cache, oracle_sketches=sketches)


def _oracle_for(samples, train_cfg, rng):
    if not train_cfg.oracle_prior:
        return None
    return np.stack([drop_sketch(s.sketch.mask, train_cfg.oracle_drop_rate, rng) for s in samples])


def train(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, eval_set=None,
          on_epoch=None):
    """SGD with momentum and poly learning-rate decay on :func:`total_loss`.

    Returns ``(model, records)`` where ``records`` holds one dict per epoch.
    Everything random derives from ``train_cfg.seed``. The schedule reaches
    learning rate 0 exactly at the final iteration.
    """
    if not dataset:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(train_cfg.seed)
    model = SSCModel(model_cfg, seed=train_cfg.seed)
    cache = FeatureCache(model)
    eval_cache = FeatureCache(model)
    opt = SGD(model.parameters(), train_cfg.momentum, train_cfg.weight_decay)
    per_epoch = math.ceil(len(dataset) / train_cfg.batch_size)
    total_iters = per_epoch * train_cfg.epochs
    schedule = PolySchedule(train_cfg.base_lr, max(total_iters - 1, 1), train_cfg.power)
    records = []
    it = 0
    for epoch in range(train_cfg.epochs):
        model.train()
        order = rng.permutation(len(dataset))
        sums = {}
        lr = None
        for b in range(per_epoch):
            chunk = [dataset[i] for i in order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]]
            lr = poly_lr(min(it, schedule.max_iter), schedule)
            oracle = _oracle_for(chunk, train_cfg, rng)
            opt.zero_grad()
            loss, parts = total_loss(chunk, model, rng, train_cfg, cache, oracle)
            if not all(math.isfinite(v) for v in parts.values()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, iteration {it}: {parts}")
            loss.backward()
            opt.step(lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            it += 1
        record = {"epoch": epoch, "iteration": it, "lr": lr}
        record.update({f"loss_{k}": v / per_epoch for k, v in sums.items()})
        if eval_set:
            report = evaluate_model(model, eval_set, np.random.default_rng(train_cfg.seed + 1),
                                    eval_cache)
            record.update(report.to_dict())
        records.append(record)
        log.info("epoch %d: %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record)
    model.eval()
    return model, records
