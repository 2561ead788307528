"""Two-stage completion pipeline: configuration, model, losses, metrics, data and training."""

from .config import (LayerSpec, ModelConfig, StageSpec, TrainConfig, config_from_dict,
                     config_to_dict, default_stage_spec, load_config, save_config, with_variant)
from .metrics import EvalReport, evaluate, mean_report
from .model import SSCModel, fuse_priors, stage1_forward, stage2_forward
from .synthetic import SceneSample, generate_dataset, generate_synthetic_scene
from .train import (TrainingDiverged, evaluate_model, predict, run_oracle_ablation, total_loss,
                    train)

__all__ = [
    "EvalReport", "LayerSpec", "ModelConfig", "SSCModel", "SceneSample", "StageSpec",
    "TrainConfig", "TrainingDiverged", "config_from_dict", "config_to_dict",
    "default_stage_spec", "evaluate", "evaluate_model", "fuse_priors", "generate_dataset",
    "generate_synthetic_scene", "load_config", "mean_report", "predict", "run_oracle_ablation",
    "save_config", "stage1_forward", "stage2_forward", "total_loss", "train", "with_variant",
]
