"""Run configuration: a flat set of documented keys with two presets.

The ``full`` preset uses the full-size network and training budget; the
``desk`` preset shrinks data size, patience and oracle/eval budgets so the
whole pipeline runs on one CPU core. Files use ``key = value`` lines;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace

from copvae.errors import ConfigurationError

SEED_ENV = "COPVAE_SEED"


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    # data
    n_scenarios: int = 6000
    seed: int = 0
    d: int = 2
    n_dof: int = 3
    # posterior family (train encoder / single-model commands)
    family: str = "copula"
    k: int = 1
    # decoder pretraining
    dec_lr: float = 5e-3
    dec_batch_size: int = 512
    dec_max_epochs: int = 2000
    dec_patience: int = 200
    dec_min_delta: float = 1e-7
    # encoder training
    lr: float = 3e-4
    batch_size: int = 1024
    max_epochs: int = 1000
    patience: int = 300
    min_delta: float = 1e-3
    beta: float = 0.075
    h_train: int = 1
    h_val: int = 1
    n_mc_train: int = 1024
    clip_norm: float = 1.0
    # oracle
    n_grid: int = 200
    n_f: int = 2000
    # evaluation
    r: int = 20
    n_r: int = 100
    h_eval: int = 100
    n_mc_eval: int = 65536
    n_heatmaps: int = 4
    heatmap_grid: int = 50
    models: str = "diag_gm:1,diag_gm:2,full_gm:1,full_gm:2,copula:1"

    def __post_init__(self):
        positive = ("n_scenarios", "d", "n_dof", "k", "dec_batch_size", "dec_max_epochs",
                    "dec_patience", "batch_size", "max_epochs", "patience", "h_train",
                    "h_val", "n_mc_train", "n_grid", "n_f", "r", "n_r", "h_eval",
                    "n_mc_eval", "heatmap_grid")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("dec_lr", "lr", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_heatmaps < 0 or self.clip_norm < 0:
            raise ConfigurationError("n_heatmaps and clip_norm must be >= 0")
        self.model_list()

    def model_list(self):
        """[(family, k), ...] parsed from ``models``."""
        out = []
        for item in filter(None, (s.strip() for s in self.models.split(","))):
            fam, _, k = item.partition(":")
            if fam not in ("diag_gm", "full_gm", "copula"):
                raise ConfigurationError(f"models: unknown family {fam!r}")
            try:
                out.append((fam, int(k or 1)))
            except ValueError as exc:
                raise ConfigurationError(f"models: bad component count in {item!r}") from exc
        return out

    def to_dict(self):
        return asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS = {
    "desk": RunConfig(),
    "full": RunConfig(
        preset="full", n_scenarios=60000, dec_max_epochs=10000, dec_patience=1000,
        dec_min_delta=1e-3, lr=1e-4, max_epochs=10000, patience=1000, n_mc_train=4096,
        clip_norm=0.0, n_f=10000, r=50, n_r=1000,
        models="diag_gm:1,diag_gm:2,diag_gm:10,full_gm:1,full_gm:2,full_gm:10,copula:1",
    ),
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, text):
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    default = getattr(RunConfig(), key)
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: cannot parse {text!r}") from exc
    return text


def parse_lines(text):
    """``{key: raw string}`` from key = value text."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"config line {n}: expected key = value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None, env=None):
    """Preset, then file, then ``COPVAE_SEED``, then explicit ``overrides``."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw.update(parse_lines(fh.read()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        raw["seed"] = env[SEED_ENV]
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    preset = raw.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}")
    values = {k: _coerce(k, v) for k, v in raw.items()}
    return replace(PRESETS[preset], **values)


def dump_config(cfg: RunConfig):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
