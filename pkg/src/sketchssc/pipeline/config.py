"""Model and training configuration, read from and written to JSON.

The shipped default lives in ``sketchssc/configs/toy.json``. Unknown keys
are rejected so that typos do not silently fall back to defaults.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Optional

from ..cvae import HallucinationConfig

LAYER_TYPES = ("conv", "ddr", "deconv")


@dataclass(frozen=True)
class LayerSpec:
    type: str
    kernel: int = 3
    dilation: int = 1
    downsample: int = 1
    upsample: int = 2

    def __post_init__(self):
        if self.type not in LAYER_TYPES:
            raise ValueError(f"layer type must be one of {LAYER_TYPES}, got {self.type!r}")
        if min(self.kernel, self.dilation, self.downsample, self.upsample) < 1:
            raise ValueError(f"layer parameters must be positive: {self}")

    def scale_factor(self):
        if self.type == "ddr":
            return 1.0 / self.downsample
        if self.type == "deconv":
            return float(self.upsample)
        return 1.0


@dataclass(frozen=True)
class StageSpec:
    """Layer list of one 3D stage.

    ``skip`` holds ``(a, b)`` pairs, each adding layer a's output to layer b's;
    a single pair may be given bare.
    """

    layers: tuple
    skip: Optional[tuple] = None
    channels: int = 16
    bottleneck: int = 8
    batch_norm: bool = False

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("a stage needs at least one layer")
        scales, s = [], 1.0
        for layer in layers:
            s *= layer.scale_factor()
            scales.append(s)
        if abs(s - 1.0) > 1e-12:
            raise ValueError(f"stage output scale is {s}, must return to full resolution")
        if self.skip is not None:
            pairs = self.skip
            if len(pairs) == 2 and all(isinstance(v, int) for v in pairs):
                pairs = (pairs,)
            checked = []
            for pair in pairs:
                a, b = (int(v) for v in pair)
                if not 0 <= a < b < len(layers):
                    raise ValueError(f"skip endpoints {pair} out of order or range")
                if abs(scales[a] - scales[b]) > 1e-12:
                    raise ValueError(f"skip endpoints {pair} have different resolutions")
                checked.append((a, b))
            object.__setattr__(self, "skip", tuple(checked) or None)

    @property
    def downsample_factor(self):
        f, worst = 1.0, 1.0
        for layer in self.layers:
            f *= layer.scale_factor()
            worst = min(worst, f)
        return int(round(1.0 / worst))


@dataclass(frozen=True)
class Encoder2DSpec:
    """Frozen 2D image encoder: 3x3 convs with the given widths, then a 1x1
    channel-reduction conv with batch norm and ReLU."""

    hidden: tuple = (8, 16)
    seed_offset: int = 7

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class ModelConfig:
    grid_dims: tuple = (16, 8, 16)
    num_classes: int = 5
    feature_channels: int = 16
    stage1: StageSpec = None
    stage2: StageSpec = None
    encoder2d: Encoder2DSpec = field(default_factory=Encoder2DSpec)
    hallucination: HallucinationConfig = field(default_factory=HallucinationConfig)
    two_stage: bool = True
    sketch_prior: bool = True
    use_cvae: bool = True
    joint: bool = True
    refined_input: str = "soft"

    def __post_init__(self):
        object.__setattr__(self, "grid_dims", tuple(int(d) for d in self.grid_dims))
        for name in ("stage1", "stage2"):
            value = getattr(self, name)
            if value is None:
                value = default_stage_spec(self.feature_channels)
            elif isinstance(value, dict):
                value = StageSpec(**value)
            object.__setattr__(self, name, value)
        if isinstance(self.encoder2d, dict):
            object.__setattr__(self, "encoder2d", Encoder2DSpec(**self.encoder2d))
        if isinstance(self.hallucination, dict):
            object.__setattr__(self, "hallucination", HallucinationConfig(**self.hallucination))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.refined_input not in ("soft", "binary"):
            raise ValueError("refined_input must be 'soft' or 'binary'")
        if self.use_cvae and not self.two_stage:
            raise ValueError("the hallucination module needs the two-stage model")
        if self.sketch_prior and not self.two_stage:
            raise ValueError("sketch supervision needs the two-stage model")
        for spec in (self.stage1, self.stage2):
            f = spec.downsample_factor
            if any(d % f for d in self.grid_dims):
                raise ValueError(f"grid dims {self.grid_dims} not divisible by stage downsampling {f}")

    @property
    def variant(self):
        if not self.two_stage:
            return "one-stage"
        if not self.sketch_prior:
            return "two-stage"
        return "two-stage+prior+cvae" if self.use_cvae else "two-stage+prior"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    momentum: float = 0.9
    weight_decay: float = 0.0005
    base_lr: float = 0.1
    power: float = 0.9
    epochs: int = 10
    seed: int = 0
    semantic_class_weights: Optional[tuple] = None
    sketch_class_weights: Optional[tuple] = None
    oracle_prior: bool = False
    oracle_drop_rate: float = 0.0

    def __post_init__(self):
        for name in ("semantic_class_weights", "sketch_class_weights"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.oracle_drop_rate <= 1.0:
            raise ValueError("oracle_drop_rate must lie in [0, 1]")


def default_stage_spec(channels=16):
    return StageSpec(
        layers=(
            LayerSpec("conv", kernel=3, dilation=1),
            LayerSpec("conv", kernel=3, dilation=1),
            LayerSpec("ddr", dilation=1, downsample=2),
            LayerSpec("ddr", dilation=2, downsample=2),
            LayerSpec("ddr", dilation=3, downsample=1),
            LayerSpec("deconv", kernel=3, upsample=2),
            LayerSpec("deconv", kernel=3, upsample=2),
        ),
        skip=(2, 5),
        channels=channels,
        bottleneck=max(channels // 2, 1),
    )


def _strict(cls, data, where):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return data


def config_from_dict(data):
    """Build ``(ModelConfig, TrainConfig)`` from a nested dict."""
    _strict_top = set(data) - {"model", "train"}
    if _strict_top:
        raise ValueError(f"unknown top-level config keys: {sorted(_strict_top)}")
    m = dict(_strict(ModelConfig, data.get("model", {}), "model"))
    for name in ("stage1", "stage2"):
        if name in m:
            s = dict(_strict(StageSpec, m[name], f"model.{name}"))
            s["layers"] = tuple(LayerSpec(**_strict(LayerSpec, l, f"model.{name}.layers"))
                                for l in s.get("layers", ()))
            m[name] = StageSpec(**s)
    if "encoder2d" in m:
        m["encoder2d"] = Encoder2DSpec(**_strict(Encoder2DSpec, m["encoder2d"], "model.encoder2d"))
    if "hallucination" in m:
        m["hallucination"] = HallucinationConfig(
            **_strict(HallucinationConfig, m["hallucination"], "model.hallucination"))
    t = _strict(TrainConfig, data.get("train", {}), "train")
    return ModelConfig(**m), TrainConfig(**t)


def config_to_dict(model_cfg, train_cfg):
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj

    return {"model": clean(asdict(model_cfg)), "train": clean(asdict(train_cfg))}


def load_config(path=None):
    """Read a JSON config; ``None`` loads the shipped toy default."""
    if path is None:
        text = resources.files("sketchssc").joinpath("configs/toy.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return config_from_dict(json.loads(text))


def save_config(path, model_cfg, train_cfg):
    with open(path, "w") as fh:
        json.dump(config_to_dict(model_cfg, train_cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_variant(model_cfg, variant):
    """Copy of ``model_cfg`` switched to one of the ablation variants."""
    flags = {
        "one-stage": dict(two_stage=False, sketch_prior=False, use_cvae=False),
        "two-stage": dict(two_stage=True, sketch_prior=False, use_cvae=False),
        "two-stage+prior": dict(two_stage=True, sketch_prior=True, use_cvae=False),
        "two-stage+prior+cvae": dict(two_stage=True, sketch_prior=True, use_cvae=True),
    }
    if variant not in flags:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(flags)}")
    return replace(model_cfg, **flags[variant])
