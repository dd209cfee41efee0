"""Run configuration: INI sections ``[run] [data] [model] [train]`` with strict keys.

Every key has a default, so an empty file is a valid configuration.  Unknown
sections or keys and unparsable values raise :class:`ConfigError` before any
work starts.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace

from .attention import AttentionConfig
from .backbone import BackboneConfig
from .data import SampleSpec
from .errors import ConfigurationError
from .events import ToyConfig
from .model import ModelConfig
from .neuron import LIFConfig, Surrogate
from .pose.loss import LossWeights


class ConfigError(ConfigurationError):
    """Unreadable, unknown or invalid configuration entry."""


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunSection:
    seed: int = 0
    dataset: str = "data"
    out: str = "run"


@dataclass
class DataSection:
    T: int = 8
    H: int = 64
    W: int = 64
    C: int = 4
    threshold: int = 0
    polarity: bool = False
    frames_per_packet: int = 2
    train_stride: int = 4
    n_sequences: int = 4
    n_eval_sequences: int = 1
    random_phase: bool = True
    contrast_threshold: float = 0.5
    skeleton: str = "desk"
    n_links: int = 1
    link_length: float = 0.3
    sensor_width: int = 64
    sensor_height: int = 64
    fps: float = 30.0
    duration: float = 4.0
    start_delay: float = 0.0
    depth: float = 3.0
    root_xy: tuple = ()
    base: tuple = (0.0,)
    amplitude: tuple = (0.6,)
    frequency: tuple = (0.5,)
    phase: tuple = (0.0,)
    n_shape: int = 4
    line_width: float = 1.0


@dataclass
class ModelSection:
    stem_width: int = 16
    stem_stride: int = 2
    widths: tuple = (16, 32, 64, 128)
    blocks: tuple = (1, 1, 1, 1)
    strides: tuple = (1, 2, 2, 2)
    sew_kind: str = "ADD"
    clip_output: bool = False
    c_k: int = 16
    c_v: int = 16
    heads: int = 1
    layers: int = 1
    score_fn: str = "hamming"
    include_pe: bool = True
    pe_mode: str = "temporal"
    ffn_hidden: int = 0
    attention_sew_kind: str = "ADD"
    temperature: float = 1.0
    leak: float = 0.5
    v_th: float = 1.0
    reset: str = "soft"
    surrogate: str = "atan"
    surrogate_alpha: float = 2.0
    translation_offset: tuple = (0.0, 0.0, 3.0)
    average_beta: bool = False


@dataclass
class TrainSection:
    epochs: int = 50
    batch: int = 4
    lr: float = 0.01
    schedule: str = "cosine"
    optimizer: str = "adam"
    w_pose: float = 10.0
    w_shape: float = 1.0
    w_trans: float = 50.0
    w_joints3d: float = 1.0
    w_joints2d: float = 10.0
    augment: bool = True
    rotation_deg: float = 20.0
    window_scales: tuple = (0.5, 1.0, 2.0, 3.0)
    eval_every: int = 1
    grad_clip: float = 1.0


SECTIONS = {"run": RunSection, "data": DataSection, "model": ModelSection, "train": TrainSection}

# tuple fields whose entries are integers; all other tuples hold floats
_INT_TUPLES = {"widths", "blocks", "strides"}


def _parse_value(name: str, default, text: str):
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return _ints(text) if name in _INT_TUPLES else _floats(text)
    return text.strip()


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)

    # -- text form -----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",), strict=True
        )
        parser.optionxform = str  # keep key case, e.g. ``T``
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        sections = {}
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
        for name, kind in SECTIONS.items():
            defaults = kind()
            known = {f.name: getattr(defaults, f.name) for f in fields(kind)}
            values = {}
            if parser.has_section(name):
                for key, text_value in parser.items(name):
                    if key not in known:
                        raise ConfigError(f"unknown key {key!r} in [{name}]")
                    try:
                        values[key] = _parse_value(key, known[key], text_value)
                    except ValueError as exc:
                        raise ConfigError(f"[{name}] {key}: {exc}") from exc
            sections[name] = kind(**values)
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_text(text)

    def to_text(self) -> str:
        buf = io.StringIO()
        for name in SECTIONS:
            buf.write(f"[{name}]\n")
            section = getattr(self, name)
            for f in fields(section):
                buf.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
            buf.write("\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        sections = {}
        for name, kind in SECTIONS.items():
            values = dict(d.get(name, {}))
            known = {f.name: getattr(kind(), f.name) for f in fields(kind)}
            for key in values:
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                if isinstance(known[key], tuple):
                    values[key] = tuple(values[key])
            sections[name] = kind(**values)
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    def with_updates(self, **sections) -> "RunConfig":
        """Replace fields per section, e.g. ``with_updates(model={"layers": 0})``."""
        kw = {}
        for name, updates in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section {name!r}")
            section = getattr(self, name)
            names = {f.name for f in fields(section)}
            for key in updates:
                if key not in names:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
            kw[name] = replace(section, **updates)
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg

    # -- derived objects -------------------------------------------------------

    def validate(self) -> None:
        """Build every derived object once so bad combinations fail early."""
        try:
            self.toy_config()
            self.model_config()
            self.loss_weights()
            self.sample_spec()
        except (ConfigurationError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        d, t = self.data, self.train
        if d.frames_per_packet < 1 or d.train_stride < 1:
            raise ConfigError("frames_per_packet and train_stride must be positive")
        if d.n_sequences < 1 or d.n_eval_sequences < 0:
            raise ConfigError("need at least one training sequence")
        if d.H > d.sensor_height or d.W > d.sensor_width:
            raise ConfigError("voxel grid exceeds the sensor resolution")
        if d.contrast_threshold <= 0:
            raise ConfigError("contrast_threshold must be positive")
        if t.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0 (0 disables clipping)")
        if t.epochs < 0 or t.batch < 1 or t.lr < 0 or t.eval_every < 1:
            raise ConfigError("epochs >= 0, batch >= 1, lr >= 0 and eval_every >= 1 are required")
        if t.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {t.schedule!r}")
        if t.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {t.optimizer!r}")
        if not t.window_scales or min(t.window_scales) <= 0:
            raise ConfigError("window_scales must be positive")

    def toy_config(self) -> ToyConfig:
        d = self.data
        return ToyConfig(
            skeleton=d.skeleton,
            n_links=d.n_links,
            link_length=d.link_length,
            width=d.sensor_width,
            height=d.sensor_height,
            fps=d.fps,
            duration=d.duration,
            start_delay=d.start_delay,
            depth=d.depth,
            root_xy=d.root_xy or None,
            base=d.base,
            amplitude=d.amplitude,
            frequency=d.frequency,
            phase=d.phase,
            n_shape=d.n_shape,
            line_width=d.line_width,
        )

    def sample_spec(self) -> SampleSpec:
        d = self.data
        return SampleSpec(d.T, d.H, d.W, d.C, d.threshold, d.polarity, d.frames_per_packet)

    def model_config(self) -> ModelConfig:
        m, d = self.model, self.data
        backbone = BackboneConfig(
            in_channels=d.C,
            stem_width=m.stem_width,
            stem_stride=m.stem_stride,
            widths=m.widths,
            blocks=m.blocks,
            strides=m.strides,
            sew_kind=m.sew_kind,
            clip_output=m.clip_output,
        )
        attention = AttentionConfig(
            channels=backbone.feature_channels,
            c_k=m.c_k,
            c_v=m.c_v,
            heads=m.heads,
            layers=m.layers,
            score_fn=m.score_fn,
            include_pe=m.include_pe,
            pe_mode=m.pe_mode,
            ffn_hidden=m.ffn_hidden or None,
            sew_kind=m.attention_sew_kind,
            temperature=m.temperature,
        )
        lif = LIFConfig(lam=m.leak, v_th=m.v_th, reset=m.reset, surrogate=Surrogate(kind=m.surrogate, alpha=m.surrogate_alpha))
        return ModelConfig(
            height=d.H,
            width=d.W,
            n_joints=self.toy_config().n_joints,
            n_shape=d.n_shape,
            backbone=backbone,
            attention=attention,
            lif=lif,
            translation_offset=m.translation_offset,
            average_beta=m.average_beta,
        )

    def loss_weights(self) -> LossWeights:
        t = self.train
        return LossWeights(t.w_pose, t.w_shape, t.w_trans, t.w_joints3d, t.w_joints2d)
