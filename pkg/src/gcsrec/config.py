"""Run configuration: dataclasses plus the plain-text key=value format.

Published-scale defaults (d=64, max_len=50, batch 256-1024) are noted next
to each field; the dataclass defaults are desk-scale so the test suite and
bundled experiments run in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .transition_graph import SamplerConfig

ABLATIONS = ("full", "no_gcl", "no_gcl_no_mmd", "unweighted_edges")


@dataclass
class ModelConfig:
    dim: int = 16            # embedding width d (published runs use 64)
    heads: int = 2
    layers: int = 2
    max_len: int = 12        # window length (published runs use 50)
    dropout: float = 0.2

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0,1), got {self.dropout}")


@dataclass
class LossWeights:
    lambda1: float = 0.1     # view-contrastive weight; grid {0.01..1.0}
    lambda2: float = 0.1     # alignment (MMD) weight; same grid
    tau: float = 0.5         # contrastive temperature
    rho: float = 1.0         # Gaussian kernel bandwidth
    gcl_symmetric: bool = True
    rho_median_heuristic: bool = False

    def __post_init__(self):
        if self.tau <= 0 or self.rho <= 0:
            raise ValueError("tau and rho must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    batch_size: int = 64     # published runs choose from {256, 512, 1024}
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 5e-5         # decoupled weight decay
    max_epochs: int = 300
    patience: int = 10       # epochs of no validation HR@10 improvement
    lr_decay_interval: int = 20
    lr_decay_factor: float = 0.5
    seed: int = 0
    ablation: str = "full"
    resample_per_epoch: bool = True
    grad_clip: float = 10.0  # global gradient-norm cap; 0 disables

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def effective(self) -> "TrainConfig":
        """Apply the ablation switches to the loss weights."""
        if self.ablation == "no_gcl":
            return replace(self, weights=replace(self.weights, lambda1=0.0))
        if self.ablation == "no_gcl_no_mmd":
            return replace(self, weights=replace(self.weights, lambda1=0.0, lambda2=0.0))
        return self

    @property
    def unweighted_edges(self) -> bool:
        return self.ablation == "unweighted_edges"


_SECTIONS = {
    "model": (ModelConfig, "model"),
    "loss": (LossWeights, "weights"),
    "sampler": (SamplerConfig, "sampler"),
}


def _coerce(kind, raw: str):
    if kind is bool or kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize as flat key = value lines (nested fields get a dot prefix)."""
    lines = []
    for f in fields(TrainConfig):
        if f.name in ("model", "weights", "sampler"):
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for prefix, (_, attr) in _SECTIONS.items():
        section = getattr(cfg, attr)
        for f in fields(section):
            lines.append(f"{prefix}.{f.name} = {getattr(section, f.name)}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse key = value lines; unknown keys are an error, '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = raw

    cfg = base or TrainConfig()
    top = {f.name: f for f in fields(TrainConfig)}
    sections = {attr: dict(vars(getattr(cfg, attr))) for _, (_, attr) in _SECTIONS.items()}
    plain = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)
             if f.name not in ("model", "weights", "sampler")}

    for key, raw in values.items():
        if "." in key:
            prefix, name = key.split(".", 1)
            if prefix not in _SECTIONS:
                raise ValueError(f"unknown config section {prefix!r}")
            cls, attr = _SECTIONS[prefix]
            ftypes = {f.name: f.type for f in fields(cls)}
            if name not in ftypes:
                raise ValueError(f"unknown config key {key!r}")
            kind = {"int": int, "float": float, "bool": bool, "str": str}[str(ftypes[name])]
            sections[attr][name] = _coerce(kind, raw)
        else:
            if key not in top or key in ("model", "weights", "sampler"):
                raise ValueError(f"unknown config key {key!r}")
            kind = {"int": int, "float": float, "bool": bool, "str": str}[str(top[key].type)]
            plain[key] = _coerce(kind, raw)

    return TrainConfig(
        model=ModelConfig(**sections["model"]),
        weights=LossWeights(**sections["weights"]),
        sampler=SamplerConfig(**sections["sampler"]),
        **plain,
    )
