"""Run configuration: typed fields, key=value file format, canonical hash."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

TASKS = ("multiple_choice", "open_ended", "count")
RELATIONS = ("gcn", "fc", "lstm", "none")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    task: str = "multiple_choice"

    # model dims
    d_o: int = 128          # projected object feature width
    d_s_loc: int = 64       # spatial location encoding width
    d_p: int = 64           # temporal (sinusoid) encoding width, even
    d_s: int = 128          # shared visual/question subspace width, even
    d_g: int = 128          # global frame-context width
    hidden: int = 64        # question Bi-LSTM hidden size per direction
    d_char: int = 64        # char-CNN output width (number of kernels)
    d_c: int = 16           # char embedding width
    word_dim: int = 300
    char_len: int = 16      # words padded/truncated to this many chars
    char_kernel: int = 5
    max_question_len: int = 32
    frame_kernel: int = 3   # 1-D conv width over frames

    # graph
    gcn_layers: int = 2
    objects_per_frame: int = 5
    relation: str = "gcn"
    use_objects: bool = True
    use_spatial_loc: bool = True
    use_temporal_loc: bool = True
    normalize_boxes: bool = True
    share_adjacency_projections: bool = False

    # optimization
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 0     # 0 = task default: 64 multiple choice/count, 128 open ended
    epochs: int = 30
    seed: int = 0

    # embeddings
    train_word_embeddings: bool = True
    pretrained_embeddings: str = ""

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}'")
        if self.relation not in RELATIONS:
            raise ConfigError(f"unknown relation '{self.relation}'")
        if self.d_p % 2 != 0:
            raise ConfigError("d_p must be even")
        if self.d_s % 2 != 0:
            raise ConfigError("d_s must be even (output Bi-LSTM uses d_s/2 per direction)")
        if self.gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if self.objects_per_frame < 1:
            raise ConfigError("objects_per_frame must be >= 1")
        if self.char_kernel > self.char_len:
            raise ConfigError("char_kernel wider than padded word length")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def effective_batch(self) -> int:
        if self.batch_size > 0:
            return self.batch_size
        return 128 if self.task == "open_ended" else 64

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "Config":
        cfg = Config(**{f.name: getattr(self, f.name) for f in fields(self)})
        for k, v in kwargs.items():
            if not hasattr(cfg, k):
                raise ConfigError(f"unknown config field '{k}'")
            setattr(cfg, k, v)
        cfg.validate()
        return cfg


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {name}: '{raw}'")
    try:
        return kind(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: '{raw}'") from e


def parse_config(text: str) -> Config:
    cfg = Config()
    types = {f.name: f.type for f in fields(cfg)}
    actual = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        setattr(cfg, key, _parse_value(key, raw, actual[key]))
    cfg.validate()
    return cfg


def load_config(path) -> Config:
    with open(path) as f:
        return parse_config(f.read())


def save_config(cfg: Config, path) -> None:
    with open(path, "w") as f:
        f.write(cfg.to_text())
