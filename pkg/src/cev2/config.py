"""Flat key=value config files.

One `key = value` pair per line; blank lines and #-comments ignored. Network
files describe stages as

    stage.0 = fused-mbconv in=16 out=16 e=1 s=1 r=1 safm
    stage.2 = mbconv in=32 out=64 e=4 s=2 r=2 attn=ce

with scalar keys stem / head / classes / input and optional toggles
ce.shared_mlp, safm.conv_x1, safm.mode, se.ratio. Train and augment files are
plain scalar keys (see parse_train_config / parse_augment_config).
"""

from __future__ import annotations

from dataclasses import dataclass

from .backbone import NetworkConfig, StageSpec


def read_kv(path: str) -> dict[str, str]:
    """Parse `key = value` lines; later duplicates override earlier ones."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {value!r}")


def _parse_stage(value: str, key: str) -> StageSpec:
    tokens = value.split()
    if not tokens:
        raise ValueError(f"{key}: empty stage definition")
    kind = tokens[0]
    fields = {"e": 1, "s": 1, "r": 1}
    attn = "none"
    safm = False
    for tok in tokens[1:]:
        if tok == "safm":
            safm = True
            continue
        if "=" not in tok:
            raise ValueError(f"{key}: bad token {tok!r} (expected k=v or 'safm')")
        k, v = tok.split("=", 1)
        if k in ("in", "out", "e", "s", "r"):
            fields[k] = int(v)
        elif k == "attn":
            attn = v
        elif k == "safm":
            safm = _parse_bool(v, key)
        else:
            raise ValueError(f"{key}: unknown stage field {k!r}")
    if "in" not in fields or "out" not in fields:
        raise ValueError(f"{key}: stage needs in= and out= channel counts")
    return StageSpec(block_kind=kind, in_channels=fields["in"], out_channels=fields["out"],
                     expansion=fields["e"], stride=fields["s"], repeats=fields["r"],
                     attention=attn, safm_after=safm)


def parse_network_config(path: str) -> NetworkConfig:
    kv = read_kv(path)
    stage_keys = sorted((k for k in kv if k.startswith("stage.")),
                        key=lambda k: int(k.split(".", 1)[1]))
    indices = [int(k.split(".", 1)[1]) for k in stage_keys]
    if indices != list(range(len(indices))):
        raise ValueError(f"{path}: stage indices must be contiguous from 0, got {indices}")
    stages = [_parse_stage(kv[k], k) for k in stage_keys]

    cfg = NetworkConfig(
        stem_channels=int(kv.get("stem", "16")),
        stages=stages,
        head_channels=int(kv.get("head", "128")),
        num_classes=int(kv.get("classes", "2")),
        input_size=int(kv.get("input", "64")),
    )
    if "ce.shared_mlp" in kv:
        cfg.ce_shared_mlp = _parse_bool(kv["ce.shared_mlp"], "ce.shared_mlp")
    if "safm.conv_x1" in kv:
        cfg.safm_conv_x1 = _parse_bool(kv["safm.conv_x1"], "safm.conv_x1")
    if "safm.mode" in kv:
        cfg.safm_mode = kv["safm.mode"]
    if "se.ratio" in kv:
        cfg.se_ratio = int(kv["se.ratio"])
    return cfg


@dataclass
class TrainConfig:
    network: str = ""
    dataset: str = ""
    epochs: int = 50
    batch_size: int = 16
    optimizer: str = "sgd-momentum"
    learning_rate: float | None = None  # None -> per-optimizer default
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    augment: bool = False
    resize_to: int = 64
    split_frac: float = 0.8
    window: int = 10
    out_dir: str = "run"

    def __post_init__(self):
        if self.optimizer not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate is None:
            self.learning_rate = 0.01 if self.optimizer == "sgd-momentum" else 1e-3
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < self.window:
            raise ValueError(
                f"epochs ({self.epochs}) must be >= metrics window ({self.window})")
        if not (0.0 < self.split_frac < 1.0):
            raise ValueError(f"split_frac must be in (0,1), got {self.split_frac}")


def parse_train_config(path: str) -> TrainConfig:
    kv = read_kv(path)
    known = {
        "network": str, "dataset": str, "epochs": int, "batch_size": int,
        "optimizer": str, "lr": float, "momentum": float, "beta1": float,
        "beta2": float, "adam_eps": float, "seed": int, "augment": None,
        "resize": int, "split": float, "window": int, "out": str,
    }
    unknown = [k for k in kv if k not in known]
    if unknown:
        raise ValueError(f"{path}: unknown train keys {unknown}")
    args: dict = {}
    rename = {"lr": "learning_rate", "resize": "resize_to", "split": "split_frac",
              "out": "out_dir"}
    for key, value in kv.items():
        conv = known[key]
        dest = rename.get(key, key)
        if key == "augment":
            args[dest] = _parse_bool(value, key)
        else:
            args[dest] = conv(value)
    if "network" not in args or "dataset" not in args:
        raise ValueError(f"{path}: train config needs network= and dataset=")
    return TrainConfig(**args)


@dataclass
class AugmentConfig:
    rotation_deg: tuple[float, float] = (-90.0, 90.0)
    translate_frac: float = 0.10
    gauss_std: float = 0.02
    sp_density: float = 0.02
    hflip_prob: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.25)
    per_class_new: int = 100
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_deg
        if hi < lo:
            raise ValueError(f"rotation_deg interval degenerate: [{lo}, {hi}]")
        slo, shi = self.scale_range
        if shi < slo or slo <= 0:
            raise ValueError(f"scale_range invalid: [{slo}, {shi}]")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise ValueError(f"hflip_prob must be in [0,1], got {self.hflip_prob}")
        if not (0.0 <= self.sp_density < 1.0):
            raise ValueError(f"sp_density must be in [0,1), got {self.sp_density}")
        if self.gauss_std < 0 or self.translate_frac < 0:
            raise ValueError("gauss_std and translate_frac must be >= 0")
        if self.per_class_new < 0:
            raise ValueError(f"per_class_new must be >= 0, got {self.per_class_new}")


def parse_augment_config(path: str) -> AugmentConfig:
    kv = read_kv(path)
    cfg = AugmentConfig()
    handlers = {
        "rotation_min": lambda v: _set_pair(cfg, "rotation_deg", 0, float(v)),
        "rotation_max": lambda v: _set_pair(cfg, "rotation_deg", 1, float(v)),
        "translate_frac": lambda v: setattr(cfg, "translate_frac", float(v)),
        "gauss_std": lambda v: setattr(cfg, "gauss_std", float(v)),
        "sp_density": lambda v: setattr(cfg, "sp_density", float(v)),
        "hflip_prob": lambda v: setattr(cfg, "hflip_prob", float(v)),
        "scale_min": lambda v: _set_pair(cfg, "scale_range", 0, float(v)),
        "scale_max": lambda v: _set_pair(cfg, "scale_range", 1, float(v)),
        "per_class_new": lambda v: setattr(cfg, "per_class_new", int(v)),
        "seed": lambda v: setattr(cfg, "seed", int(v)),
    }
    unknown = [k for k in kv if k not in handlers]
    if unknown:
        raise ValueError(f"{path}: unknown augment keys {unknown}")
    for key, value in kv.items():
        handlers[key](value)
    cfg.__post_init__()
    return cfg


def _set_pair(cfg, attr: str, idx: int, value: float) -> None:
    pair = list(getattr(cfg, attr))
    pair[idx] = value
    setattr(cfg, attr, tuple(pair))
