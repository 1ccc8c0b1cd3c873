"""Model hyperparameter record shared by the builder, pipeline, and oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import BuildError


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    n_layers: int
    n_heads: int
    n_kv_heads: int
    vocab_size: int
    ffn_hidden: int
    max_seq_len: int
    norm_eps: float = 1e-5
    rope_theta: float = 10000.0

    def __post_init__(self):
        if self.dim % self.n_heads != 0:
            raise BuildError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.n_heads % self.n_kv_heads != 0:
            raise BuildError(
                f"n_heads {self.n_heads} not divisible by n_kv_heads {self.n_kv_heads}")
        if self.head_dim % 2 != 0:
            raise BuildError(f"head_dim {self.head_dim} must be even")
        if self.max_seq_len < 1:
            raise BuildError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        for field_name in ("dim", "n_layers", "n_heads", "n_kv_heads",
                           "vocab_size", "ffn_hidden"):
            if getattr(self, field_name) < 1:
                raise BuildError(f"{field_name} must be >= 1")
        if self.norm_eps <= 0:
            raise BuildError(f"norm_eps must be > 0, got {self.norm_eps}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    @property
    def n_rep(self) -> int:
        """How many query heads share each key/value head."""
        return self.n_heads // self.n_kv_heads

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["head_dim"] = self.head_dim
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in (
            "dim", "n_layers", "n_heads", "n_kv_heads", "vocab_size",
            "ffn_hidden", "max_seq_len", "norm_eps", "rope_theta") if k in d}
        missing = {"dim", "n_layers", "n_heads", "n_kv_heads", "vocab_size",
                   "ffn_hidden", "max_seq_len"} - set(known)
        if missing:
            raise BuildError(f"config missing fields: {sorted(missing)}")
        cfg = cls(**known)
        if "head_dim" in d and d["head_dim"] != cfg.head_dim:
            raise BuildError(
                f"config head_dim {d['head_dim']} inconsistent with "
                f"dim/n_heads = {cfg.head_dim}")
        return cfg
