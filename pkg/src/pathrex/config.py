"""Flat ``key = value`` run configuration with validation and provenance dumps."""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .joint import JointConfig
from .text_encoder import EncoderConfig


@dataclass
class RunConfig:
    # model and optimisation
    lr: float = 0.01
    d_c: int = 230
    k: int = 3
    batch_size: int = 160
    d_r: int = 40
    beta: float = 0.5
    d_w: int = 50
    d_p: int = 5
    keep_prob: float = 0.5
    epochs: int = 25
    min_count: int = 100
    # artifact choices
    pos_clip: int = 30
    max_len: int = 120
    path_cap: int = 8
    hop_mode: str = "greedy"
    bag_mode: str = "max"
    freeze_hops: bool = False
    seed: int = 0
    threads: int = 1
    neg_ratio: float = 1.0
    split_train: float = 0.8
    split_valid: float = 0.1
    split_test: float = 0.1
    p_at_total: int = 20000

    def problems(self):
        """Every validation failure, not just the first."""
        out = []
        for name in ("lr", "d_c", "k", "batch_size", "d_r", "d_w", "d_p", "epochs", "pos_clip", "max_len",
                     "path_cap", "threads", "p_at_total"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0 (got {getattr(self, name)})")
        if self.beta < 0:
            out.append(f"beta must be >= 0 (got {self.beta})")
        if not 0 < self.keep_prob <= 1:
            out.append(f"keep_prob must be in (0, 1] (got {self.keep_prob})")
        if self.min_count < 0:
            out.append(f"min_count must be >= 0 (got {self.min_count})")
        if self.neg_ratio < 0:
            out.append(f"neg_ratio must be >= 0 (got {self.neg_ratio})")
        if self.seed < 0:
            out.append(f"seed must be >= 0 (got {self.seed})")
        if self.hop_mode not in ("greedy", "exhaustive"):
            out.append(f"hop_mode must be greedy or exhaustive (got {self.hop_mode!r})")
        if self.bag_mode not in ("max", "rand"):
            out.append(f"bag_mode must be max or rand (got {self.bag_mode!r})")
        ratios = self.split_ratios
        if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
            out.append(f"split_train/valid/test must be positive and sum to 1 (got {ratios})")
        return out

    def validate(self):
        bad = self.problems()
        if bad:
            raise ConfigError(bad)
        return self

    @property
    def split_ratios(self):
        return (self.split_train, self.split_valid, self.split_test)

    def encoder(self, n_r):
        return EncoderConfig(
            d_w=self.d_w, d_p=self.d_p, d_c=self.d_c, k=self.k, n_r=n_r, max_len=self.max_len, pos_clip=self.pos_clip
        )

    def joint(self):
        return JointConfig(
            beta=self.beta, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, bag_mode=self.bag_mode,
            hop_mode=self.hop_mode, keep_prob=self.keep_prob, seed=self.seed, freeze_hops=self.freeze_hops,
            threads=self.threads,
        )

    def dumps(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"

    def dump(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def replace(self, **overrides):
        """Copy with ``overrides`` applied (``None`` values are ignored) and validated."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(changes) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        return dataclasses.replace(self, **changes).validate()


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw, kind):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. All errors are reported together."""
    values = {}
    problems = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{n}: expected key = value")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            problems.append(f"{source}:{n}: unknown key {key!r}")
            continue
        try:
            values[key] = _convert(key, raw, _TYPES[key])
        except ValueError as exc:
            problems.append(f"{source}:{n}: bad value for {key}: {exc}")
    cfg = RunConfig(**values)
    problems += cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path=None):
    """Defaults when ``path`` is None, otherwise the parsed file."""
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))
