"""Run configuration: one JSON document with strict key checking and a
documented default for every field (see README for the defaults table)."""

import json
from dataclasses import asdict, dataclass, field, fields


def _from_dict(cls, data, path=""):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(unknown)} at '{path or 'root'}'")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        if hasattr(f.type, "__dataclass_fields__") or (
            isinstance(f.type, str) and f.type in _NESTED
        ):
            sub = _NESTED[f.type] if isinstance(f.type, str) else f.type
            kwargs[f.name] = _from_dict(sub, val, f"{path}.{f.name}" if path else f.name)
        else:
            kwargs[f.name] = val
    return cls(**kwargs)


@dataclass
class SensorsConfig:
    src: str = "gelslim-desk"
    dst: str = "bubble-like"


@dataclass
class DatasetConfig:
    indenter_count: int = 12
    samples_per_indenter: int = 60
    extent_x_mm: float = 10.0
    extent_y_mm: float = 10.0
    max_tilt_deg: float = 45.0
    press_min_mm: float = 0.5
    press_max_mm: float = 2.5


@dataclass
class DepthConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    lam: float = 0.5
    w_mask: float = 1.0
    base_width: int = 24


@dataclass
class DiffusionRunConfig:
    train_steps: int = 1000
    sample_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    guidance_scale: float = 2.54
    cond_drop_prob: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    base_width: int = 32


@dataclass
class VqConfig:
    codebook_size: int = 64
    embed_dim: int = 16
    width: int = 32
    commitment_weight: float = 0.25
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3


@dataclass
class EvalConfig:
    grasp_samples: int = 24
    tool_samples_per_indenter: int = 8
    stats_samples: int = 16
    contact_thresh_mm: float = 0.4
    reference_points: int = 400
    max_tilt_deg: float = 15.0


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 64
    sensors: SensorsConfig = field(default_factory=SensorsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    depth: DepthConfig = field(default_factory=DepthConfig)
    diffusion: DiffusionRunConfig = field(default_factory=DiffusionRunConfig)
    vqvae: VqConfig = field(default_factory=VqConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text):
        return _from_dict(RunConfig, json.loads(text))

    @staticmethod
    def load(path):
        with open(path) as f:
            return RunConfig.from_json(f.read())

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")


_NESTED = {
    "SensorsConfig": SensorsConfig,
    "DatasetConfig": DatasetConfig,
    "DepthConfig": DepthConfig,
    "DiffusionRunConfig": DiffusionRunConfig,
    "VqConfig": VqConfig,
    "EvalConfig": EvalConfig,
}
