"""Train a small two-stage model, then swap in ground-truth sketches.

The oracle ablation replaces the stage-1 prediction by the true sketch,
randomly thinned. Scores should fall as more of the sketch is dropped.
Takes about a minute and a half on one CPU.
"""

from dataclasses import replace

import numpy as np

from sketchssc.pipeline.config import load_config
from sketchssc.pipeline.synthetic import generate_dataset
from sketchssc.pipeline.train import evaluate_model, run_oracle_ablation, train
from sketchssc.voxel import GridSpec

model_cfg, train_cfg = load_config()
model_cfg = replace(model_cfg, num_classes=4)
spec = GridSpec(model_cfg.grid_dims, 0.1)
train_set = generate_dataset(10, 48, spec, 4)
eval_set = generate_dataset(20, 6, spec, 4)
train_cfg = replace(train_cfg, epochs=8, semantic_class_weights=(1, 2, 2, 6),
                    sketch_class_weights=(1, 4))

print(f"training {model_cfg.variant} on {len(train_set)} rooms for {train_cfg.epochs} epochs")
model, records = train(train_set, model_cfg, train_cfg, eval_set=eval_set,
                       on_epoch=lambda r: print(f"   epoch {r['epoch']}: loss {r['loss_total']:.3f} "
                                                f"(semantic {r['loss_semantic']:.3f}, "
                                                f"sketch {r['loss_sketch']:.3f}, "
                                                f"hybrid {r['loss_hybrid']:.3f})  "
                                                f"SSC mIoU {r['ssc_miou']:.3f}"))

learned = evaluate_model(model, eval_set, np.random.default_rng(0))
print(f"\nlearned sketch:   SC IoU {learned.sc_iou:.3f}  SSC mIoU {learned.ssc_miou:.3f}")
for rate in (0.0, 0.4, 0.8, 1.0):
    rep = run_oracle_ablation(eval_set, model, rate, np.random.default_rng(0))
    print(f"oracle drop {rate:.1f}: SC IoU {rep.sc_iou:.3f}  SSC mIoU {rep.ssc_miou:.3f}")
