"""Run configuration: one flat key=value file drives every pipeline stage."""

import dataclasses
import hashlib


@dataclasses.dataclass
class RunConfig:
    # model sizes
    embed_dim: int = 256
    hidden_dim: int = 512
    ec_vocab: int = 4035
    adapter_dim: int = 128
    # game
    feat_dim: int = 2048
    n_train_feats: int = 50000
    n_valid_feats: int = 5000
    feat_clusters: int = 32
    feat_sigma: float = 0.5
    k_train: int = 255
    k_eval: int = 127
    l_max: int = 15
    temperature: float = 1.0
    ec_steps: int = 10000
    stop_accuracy: float = 0.0
    eval_every: int = 50
    eval_rounds: int = 1000
    # optimization
    lr: float = 1e-3
    dropout_ec: float = 0.1
    dropout_mt: float = 0.2
    batch: int = 128
    ft_epochs: int = 30
    # regularizer
    reg: str = "OFF"
    alpha: float = 5.0
    lam: float = 0.998
    # decoding
    beam: int = 12
    max_len: int = 80
    # seeds, one per stage of randomness
    ec_seed: int = 1
    data_seed: int = 2
    ft_seed: int = 3

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"config: lam must be in [0, 1), got {self.lam}")
        for field in ("embed_dim", "hidden_dim", "ec_vocab", "feat_dim", "l_max",
                      "batch", "beam", "max_len", "eval_every"):
            if getattr(self, field) <= 0:
                raise ValueError(f"config: {field} must be positive, got {getattr(self, field)}")
        for field in ("lr", "alpha", "temperature"):
            if getattr(self, field) <= 0.0:
                raise ValueError(f"config: {field} must be positive, got {getattr(self, field)}")
        for field in ("dropout_ec", "dropout_mt"):
            if not 0.0 <= getattr(self, field) < 1.0:
                raise ValueError(f"config: {field} must be in [0, 1), got {getattr(self, field)}")
        if self.k_train < 1 or self.k_eval < 0:
            raise ValueError(f"config: bad distractor counts k_train={self.k_train} k_eval={self.k_eval}")


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELDS[key]
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def parse_overrides(pairs):
    """key=value strings (from a file or the command line) to a dict."""
    out = {}
    for raw in pairs:
        if "=" not in raw:
            raise ValueError(f"config: expected key=value, got {raw!r}")
        key, value = raw.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"config: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value.strip())
        except ValueError as exc:
            raise ValueError(f"config: bad value for {key}: {exc}")
    return out


def load_config(path=None, overrides=()):
    """File first, then overrides on top; either part is optional."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
        pairs = [ln for ln in lines if ln and not ln.startswith("#")]
        values.update(parse_overrides(pairs))
    values.update(parse_overrides(overrides))
    return RunConfig(**values)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(RunConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")


def config_hash(cfg, extra=""):
    """Short content address for a run; `extra` distinguishes sweep cells."""
    text = ",".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in dataclasses.fields(RunConfig))
    return hashlib.sha256((text + "|" + extra).encode("utf-8")).hexdigest()[:12]
