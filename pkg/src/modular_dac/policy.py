"""Transformer configuration policy with a Gaussian action head and token-averaged critic.

Each module token is embedded from its id bits and its nine features, a
positional encoding marks its place in the structure, three attention
blocks mix information across modules, and per-token heads emit the mean
and spread of the module's raw configuration action.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .env import C_MAX, ID_BITS, N_FEATURES, StateTokenSeq
from .structure import L_MAX

CHECKPOINT_VERSION = 1
SIGMA_AT_ZERO = 0.3
LOG_2PI = math.log(2.0 * math.pi)


class CheckpointError(RuntimeError):
    """Checkpoint incompatible with the requested architecture."""


@dataclass(frozen=True)
class PolicyArch:
    L_max: int = L_MAX
    C_max: int = C_MAX
    d_model: int = 64
    d_embed: int = 16
    n_heads: int = 4
    n_blocks: int = 3
    d_critic: int = 16
    pe: str = "sin"  # "sin" | "none" | "learned"
    mixer: str = "msa"  # "msa" | "mlp"
    critic_mean: str = "lmax"  # "lmax" | "active"
    mu_map: str = "sigmoid"  # "sigmoid" keeps mu inside the action box | "linear"
    mu_bias: float = 0.0
    sigma_min: float = 0.01
    sigma_max: float = 1.0

    def __post_init__(self):
        if self.pe not in ("sin", "none", "learned"):
            raise ValueError(f"pe must be sin, none or learned, not {self.pe!r}")
        if self.mixer not in ("msa", "mlp"):
            raise ValueError(f"mixer must be msa or mlp, not {self.mixer!r}")
        if self.critic_mean not in ("lmax", "active"):
            raise ValueError(f"critic_mean must be lmax or active, not {self.critic_mean!r}")
        if self.mu_map not in ("sigmoid", "linear"):
            raise ValueError(f"mu_map must be sigmoid or linear, not {self.mu_map!r}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def ablation(cls, name: str, **kw) -> "PolicyArch":
        """Named variants: full, npe (no PE), lpe (learned PE), mlp (no attention)."""
        table = {"full": {}, "npe": {"pe": "none"}, "lpe": {"pe": "learned"}, "mlp": {"mixer": "mlp"}}
        try:
            return cls(**{**table[name.lower()], **kw})
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(table)}") from None


def sinusoidal_table(L: int, d: int) -> torch.Tensor:
    pos = torch.arange(L, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=torch.float64), i / d)
    pe = torch.zeros(L, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe.float()


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads, self.d_head = n_heads, d // n_heads
        self.q, self.k, self.v, self.o = (nn.Linear(d, d) for _ in range(4))
        self.last_weights: torch.Tensor | None = None

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        B, L, d = h.shape

        def split(x):
            return x.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = split(self.q(h)), split(self.k(h)), split(self.v(h))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        w = torch.softmax(logits, dim=-1)
        self.last_weights = w.detach()
        out = (w @ v).transpose(1, 2).reshape(B, L, d)
        return self.o(out)


class TokenMLP(nn.Module):
    """Per-token replacement for attention (no cross-module mixing)."""

    def __init__(self, d: int):
        super().__init__()
        self.fc = nn.Linear(d, d)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.fc(h))


class Block(nn.Module):
    def __init__(self, arch: PolicyArch):
        super().__init__()
        d = arch.d_model
        self.mix = SelfAttention(d, arch.n_heads) if arch.mixer == "msa" else TokenMLP(d)
        self.ln1 = nn.LayerNorm(d)
        self.ff = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask[..., None].to(h.dtype)
        hh = self.ln1(self.mix(h, mask) + h)
        out = self.ln2(torch.tanh(self.ff(hh))) + hh
        return out * m


class PolicyNet(nn.Module):
    def __init__(self, arch: PolicyArch | None = None, seed: int | None = None):
        super().__init__()
        self.arch = arch = arch or PolicyArch()
        de, d = arch.d_embed, arch.d_model
        self.embed_id = nn.Linear(ID_BITS, de)
        self.embed_opt = nn.Linear(N_FEATURES, de)
        self.embed = nn.Linear(2 * de, d)
        table = sinusoidal_table(arch.L_max, d)
        if arch.pe == "learned":
            self.pos = nn.Parameter(table.clone())
        else:
            self.register_buffer("pos", table if arch.pe == "sin" else torch.zeros_like(table))
        self.blocks = nn.ModuleList(Block(arch) for _ in range(arch.n_blocks))
        self.mu = nn.Linear(d, arch.C_max)
        self.sigma = nn.Linear(d, arch.C_max)
        self.critic1 = nn.Linear(d, arch.d_critic)
        self.critic2 = nn.Linear(arch.d_critic, 1)
        self.sigma_shift = math.log(math.expm1(SIGMA_AT_ZERO))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int | None = None) -> None:
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        for name, mod in self.named_modules():
            if isinstance(mod, nn.Linear):
                w = torch.empty_like(mod.weight)
                _orthogonal(w, gen)
                # orthogonal rows rescaled to unit-variance preactivations
                w *= math.sqrt(max(w.shape) / w.shape[1])
                if name in ("mu", "sigma", "critic2"):
                    w *= 0.01
                with torch.no_grad():
                    mod.weight.copy_(w)
                    mod.bias.zero_()
        with torch.no_grad():
            self.mu.bias.fill_(self.arch.mu_bias)

    # ------------------------------------------------------------ forward
    def encode(self, ids: torch.Tensor, feats: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if ids.shape[-2] > self.arch.L_max:
            raise ValueError(f"{ids.shape[-2]} tokens exceed L_max={self.arch.L_max}")
        m = mask[..., None].to(ids.dtype)
        e = torch.cat([torch.tanh(self.embed_id(ids)), torch.tanh(self.embed_opt(feats))], dim=-1)
        e = torch.tanh(self.embed(e)) * m
        L = ids.shape[-2]
        return (e + self.pos[:L].to(e.dtype)) * m

    def attend(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            h = blk(h, mask)
        return h

    def heads(self, h: torch.Tensor):
        a = self.arch
        mu = self.mu(h)
        if a.mu_map == "sigmoid":
            mu = torch.sigmoid(mu)
        sigma = torch.clamp(F.softplus(self.sigma(h) + self.sigma_shift), a.sigma_min, a.sigma_max)
        return mu, sigma

    def value(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.to(h.dtype)
        n_active = m.sum(-1)
        if torch.any(n_active == 0):
            raise ValueError("value() needs at least one active token")
        per_token = self.critic2(torch.tanh(self.critic1(h))).squeeze(-1) * m
        denom = float(self.arch.L_max) if self.arch.critic_mean == "lmax" else n_active
        return per_token.sum(-1) / denom

    def forward(self, ids, feats, mask):
        """Return ``(mu, sigma, value)`` for a batch of token sequences."""
        h = self.attend(self.encode(ids, feats, mask), mask)
        mu, sigma = self.heads(h)
        return mu, sigma, self.value(h, mask)

    # ------------------------------------------------------------- policy
    @staticmethod
    def log_prob(actions, mu, sigma, act_mask) -> torch.Tensor:
        z = (actions - mu) / sigma
        lp = -0.5 * z * z - torch.log(sigma) - 0.5 * LOG_2PI
        return (lp * act_mask.to(lp.dtype)).sum(dim=(-1, -2))

    @staticmethod
    def entropy(sigma, act_mask) -> torch.Tensor:
        ent = 0.5 + 0.5 * LOG_2PI + torch.log(sigma)
        return (ent * act_mask.to(ent.dtype)).sum(dim=(-1, -2))

    def evaluate_actions(self, batch: dict, actions: torch.Tensor):
        """``(log_prob, entropy, value)`` of stored actions under current params."""
        mu, sigma, v = self(batch["ids"], batch["feats"], batch["mask"])
        am = batch["act_mask"]
        return self.log_prob(actions, mu, sigma, am), self.entropy(sigma, am), v

    @torch.no_grad()
    def act(self, batch: dict, mode: str = "sample", generator: torch.Generator | None = None):
        """Return ``(actions, log_prob, entropy, value)``; unused slots hold ``mu``."""
        mu, sigma, v = self(batch["ids"], batch["feats"], batch["mask"])
        am = batch["act_mask"]
        if mode == "mean":
            actions = mu.clone()
        elif mode == "sample":
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            actions = torch.where(am, mu + sigma * noise, mu)
        else:
            raise ValueError(f"mode must be sample or mean, not {mode!r}")
        return actions, self.log_prob(actions, mu, sigma, am), self.entropy(sigma, am), v

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def param_counts(self) -> dict:
        return {n: p.numel() for n, p in self.named_parameters()}


def _orthogonal(w: torch.Tensor, gen: torch.Generator) -> None:
    rows, cols = w.shape
    a = torch.randn(max(rows, cols), min(rows, cols), generator=gen, dtype=torch.float64)
    q, r = torch.linalg.qr(a)
    q = q * torch.sign(torch.diagonal(r))
    if rows < cols:
        q = q.T
    w.copy_(q[:rows, :cols].to(w.dtype))


def batch_tokens(seqs: list[StateTokenSeq], dtype=torch.float32) -> dict:
    """Stack token sequences into policy input tensors."""
    return {
        "ids": torch.as_tensor(np.stack([s.ids for s in seqs]), dtype=dtype),
        "feats": torch.as_tensor(np.stack([s.feats for s in seqs]), dtype=dtype),
        "mask": torch.as_tensor(np.stack([s.mask for s in seqs])),
        "act_mask": torch.as_tensor(np.stack([s.act_mask for s in seqs]) & np.stack([s.ctrl for s in seqs])[..., None]),
    }


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, policy: PolicyNet, *, optimizer=None, step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(policy.arch),
        "arch_hash": policy.arch.hash,
        "state_dict": policy.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected: PolicyArch | None = None) -> tuple[PolicyNet, dict]:
    """Load a policy; raises :class:`CheckpointError` on version or architecture mismatch."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')!r}")
    arch = PolicyArch(**blob["arch"])
    if arch.hash != blob["arch_hash"]:
        raise CheckpointError("checkpoint architecture record is inconsistent with its hash")
    if expected is not None and expected.hash != arch.hash:
        raise CheckpointError(f"architecture hash mismatch: checkpoint {arch.hash}, expected {expected.hash}")
    policy = PolicyNet(arch)
    policy.load_state_dict(blob["state_dict"])
    return policy, blob
