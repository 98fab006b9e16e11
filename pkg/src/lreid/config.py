"""Run configuration: a flat, typed key = value text format.

Every key has a documented default; unknown keys are rejected so typos fail
loudly. `parse -> serialize -> parse` is the identity.
"""

import dataclasses
from dataclasses import dataclass

from .backbone import BackboneConfig


@dataclass
class RunConfig:
    # run
    seed: int = 7
    precision: str = "float32"  # float32 | float64 (64-bit verification mode)
    out_dir: str = "runs/default"
    save_every_epoch: bool = False
    # encoder
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    aux_tokens: int = 2  # S, the auxiliary class-token count
    mlp_ratio: float = 4.0
    emphasis_mode: str = "emphasis"  # emphasis | mask | off
    dropout: float = 0.0
    # fusion and losses
    temperature: float = 2.0  # distillation temperature
    ema_k: float = 0.996  # teacher EMA coefficient; 1.0 freezes the teacher
    margin: float = 0.0  # triplet margin
    clamp_fusion_weights: bool = False  # clip fusion cosines to [0, 1]
    averaged_triplet: bool = False  # per-representation triplet instead of concat
    use_distill: bool = True  # tempered KL to the teacher on new instances
    use_align: bool = True  # old-instance triplet + similarity-structure loss
    use_soft_targets: bool = True  # teacher soft targets on old instances
    use_ortho: bool = True  # auxiliary orthogonality penalty
    use_buffer: bool = True  # keep an exemplar buffer at all
    w_id: float = 1.0
    w_triplet: float = 1.0
    w_ortho: float = 1.0
    w_distill: float = 1.0
    w_triplet_old: float = 1.0
    w_consist: float = 1.0
    w_soft: float = 1.0
    # optimizer
    lr: float = 0.0032
    momentum: float = 0.9
    epochs_per_task: int = 10
    batch_p: int = 8  # identities per batch
    batch_k: int = 4  # instances per identity
    # buffer budget
    buffer_ids_per_task: int = 20
    buffer_imgs_per_id: int = 2
    # task stream (synthetic unless task_dirs is set)
    num_tasks: int = 3
    task_dirs: str = ""  # semicolon-separated Market-style folders
    ids_per_task: int = 8
    cams: int = 2
    train_imgs_per_id_per_cam: int = 4
    test_imgs_per_id_per_cam: int = 4
    brightness: float = 0.15
    translation: int = 2
    noise: float = 0.02
    unseen_specs: int = 2
    # evaluation
    eval_feature: str = "fused"  # fused | concat
    eval_model: str = "student"  # student | teacher

    def backbone_config(self):
        return BackboneConfig(
            image_height=self.image_size,
            image_width=self.image_size,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            aux_tokens=self.aux_tokens,
            mlp_ratio=self.mlp_ratio,
            emphasis_mode=self.emphasis_mode,
            dropout=self.dropout,
        )

    @property
    def batch_size(self):
        return self.batch_p * self.batch_k


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


class ConfigError(ValueError):
    pass


def _parse_value(key, raw):
    ftype = _FIELDS[key].type
    raw = raw.strip()
    try:
        if ftype == "bool" or ftype is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype == "int" or ftype is int:
            return int(raw)
        if ftype == "float" or ftype is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def parse_config(text):
    """Parse the flat format; '#' starts a comment, unknown keys are errors."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg):
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, overrides):
    """Apply CLI `--set key=value` pairs on top of a parsed config."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg
