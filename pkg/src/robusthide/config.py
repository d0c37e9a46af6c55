"""Training configuration files.

The format is INI-like: ``[section]`` headers and ``key = value`` lines,
``#`` or ``;`` comments. Every key is optional (defaults below) but unknown
sections or keys are rejected. Lists are comma separated.

    [data]
    image_size = 64            # square side in pixels
    message_length = 16        # bits per image
    dataset = synthetic        # folder of images, or "synthetic"
    synthetic_count = 2000
    synthetic_seed = 0

    [model]                    # see networks.Descriptor
    enc_channels = 32
    enc_blocks = 4
    dec_channels = 32
    dec_blocks = 5
    dec_downsample = 0
    out_gain = 0.1
    msg_grid = 0
    msg_channels = 4
    pool_grid = 1

    [train]
    batch_size = 16
    steps = 1000
    lr = 0.001
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8
    lambda_image = 0.7         # final weight of the image MSE term
    lambda_message = 1.0       # weight of the message BCE term
    lambda_image_start = 0.7   # weight before/at the start of the ramp
    image_warmup_steps = 0     # steps held at lambda_image_start
    image_ramp_steps = 0       # linear ramp length to lambda_image
    seed = 0                   # master seed (init, batches, messages, attacks)
    log_every = 100
    checkpoint_every = 0       # 0 = final checkpoint only
    checkpoint_dir =           # empty = no periodic checkpoints

    [attack]
    schedule = identity        # comma list of attack kinds
    weights =                  # comma list, same length; empty = uniform
    codec = internal:50        # codec for pseudo_diff (name:quality)
    codec_command =            # custom external command template, overrides codec name
    sigma = 0.05               # gaussian
    keep_luma = 25             # jpeg_mask
    keep_chroma = 9
    poly_quality = 50          # jpeg_poly_round

    [eval]
    codecs = internal          # codec names evaluated at every quality
    qualities = 10, 25, 50, 75, 90
    samples = 256
    seed = 1234
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from robusthide.attacks import KINDS, AttackSchedule, AttackSpec
from robusthide.external import CodecSpec, parse_codec, preset
from robusthide.networks import Descriptor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 64
    message_length: int = 16
    dataset: str = "synthetic"
    synthetic_count: int = 2000
    synthetic_seed: int = 0


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 16
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_image: float = 0.7
    lambda_message: float = 1.0
    lambda_image_start: float = 0.7
    image_warmup_steps: int = 0
    image_ramp_steps: int = 0
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    checkpoint_dir: str = ""


@dataclass(frozen=True)
class AttackSection:
    schedule: tuple = ("identity",)
    weights: tuple = ()
    codec: str = "internal:50"
    codec_command: str = ""
    sigma: float = 0.05
    keep_luma: int = 25
    keep_chroma: int = 9
    poly_quality: int = 50


@dataclass(frozen=True)
class EvalSection:
    codecs: tuple = ("internal",)
    qualities: tuple = (10, 25, 50, 75, 90)
    samples: int = 256
    seed: int = 1234


_MODEL_KEYS = [f.name for f in fields(Descriptor) if f.name not in ("image_size", "message_length")]


@dataclass(frozen=True)
class TrainConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=dict)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        t = self.train
        if t.steps < 1:
            raise ConfigError(f"train.steps must be >= 1, got {t.steps}")
        if t.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {t.batch_size}")
        if t.lr <= 0:
            raise ConfigError(f"train.lr must be > 0, got {t.lr}")
        lams = (t.lambda_image, t.lambda_message, t.lambda_image_start)
        if min(lams) < 0:
            raise ConfigError("loss weights must be >= 0")
        if t.lambda_image == 0 and t.lambda_message == 0:
            raise ConfigError("lambda_image and lambda_message cannot both be zero")
        if min(t.image_warmup_steps, t.image_ramp_steps, t.log_every, t.checkpoint_every) < 0:
            raise ConfigError("step counts must be >= 0")
        if not self.eval.qualities:
            raise ConfigError("eval.qualities must not be empty")
        if self.eval.samples < 1:
            raise ConfigError("eval.samples must be >= 1")
        if self.data.dataset == "synthetic" and self.data.synthetic_count < 1:
            raise ConfigError("data.synthetic_count must be >= 1")
        # build the derived objects once so errors surface at load time
        try:
            self.descriptor()
            self.schedule()
            self.eval_codecs()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def descriptor(self) -> Descriptor:
        return Descriptor(image_size=self.data.image_size, message_length=self.data.message_length, **self.model)

    def train_codec(self) -> CodecSpec:
        if self.attack.codec_command:
            q = parse_codec(self.attack.codec).quality if ":" in self.attack.codec else 50
            return CodecSpec(kind="external", quality=q, command=self.attack.codec_command, name="custom")
        return parse_codec(self.attack.codec)

    def schedule(self) -> AttackSchedule:
        a = self.attack
        weights = a.weights or (1.0,) * len(a.schedule)
        if len(weights) != len(a.schedule):
            raise ConfigError(f"attack.weights has {len(weights)} entries for {len(a.schedule)} attacks")
        specs = []
        for kind, w in zip(a.schedule, weights):
            if kind not in KINDS:
                raise ConfigError(f"unknown attack kind {kind!r}; expected one of {', '.join(KINDS)}")
            specs.append(AttackSpec(kind=kind, sigma=a.sigma, quality=a.poly_quality, keep_luma=a.keep_luma,
                                    keep_chroma=a.keep_chroma, weight=float(w),
                                    codec=self.train_codec() if kind == "pseudo_diff" else None))
        return AttackSchedule(specs)

    def eval_codecs(self) -> list:
        return [preset(name, q) for name in self.eval.codecs for q in self.eval.qualities]

    def to_dict(self) -> dict:
        return {"data": asdict(self.data), "model": dict(self.model), "train": asdict(self.train),
                "attack": asdict(self.attack), "eval": asdict(self.eval)}

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        def tup(sec):
            return {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}
        return cls(DataConfig(**d["data"]), dict(d["model"]), TrainSection(**d["train"]),
                   AttackSection(**tup(d["attack"])), EvalSection(**tup(d["eval"])))


_SECTIONS = {"data": DataConfig, "train": TrainSection, "attack": AttackSection, "eval": EvalSection}
_MODEL_TYPES = {f.name: f.type for f in fields(Descriptor)}


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            if where.endswith(".weights"):
                return tuple(float(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    if cp.defaults():
        raise ConfigError(f"{source}: keys outside a section: {', '.join(cp.defaults())}")
    built = {}
    model = {}
    for sec in cp.sections():
        if sec == "model":
            for key, raw in cp.items(sec):
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"{source}: unknown key {sec}.{key}")
                default = Descriptor.__dataclass_fields__[key].default
                model[key] = _convert(raw, default, f"{sec}.{key}")
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        cls = _SECTIONS[sec]
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {sec}.{key}")
            kw[key] = _convert(raw, getattr(cls(), key), f"{sec}.{key}")
        built[sec] = cls(**kw)
    return TrainConfig(model=model, **built)


def load_config(path) -> TrainConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return parse_config(text, str(p))
