"""Learned components of the solver and their checkpoint format.

Two CNN families share the encoder-decoder stack from `blocks`:

- `InitNet` predicts the starting gain field and a first de-shadowed
  estimate from the shadow image plus target mask.
- `PriorGradientNet` predicts the learned prior gradient for one stage from
  the current gain field, the shadow image, and the target mask.

`SolverWeights` bundles everything trainable (both nets plus per-stage step
sizes) and owns the checkpoint layout: a single archive with a version tag,
a solver-config hash, a parameter-shape manifest, the parameter blobs, and
optionally optimizer state. Loading refuses to proceed unless manifest and
config hash both match the requested configuration.
"""

import dataclasses
import hashlib
import json
import math
import os
from pathlib import Path

import torch
import torch.nn as nn

from .blocks import StackSpec, build_dmrb_stack, parameter_manifest
from .errors import WeightError

VERSION = "0.1.0"
CHECKPOINT_FORMAT = "deshadow-checkpoint/1"

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def torch_dtype(name: str) -> torch.dtype:
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name!r}; use one of {sorted(_DTYPES)}")
    return _DTYPES[name]


def solver_config_hash(cfg) -> str:
    """Stable hash of a solver configuration (key order independent)."""
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()


class InitNet(nn.Module):
    """Predicts (gain field, first estimate) from (image, mask)."""

    def __init__(self, cfg):
        super().__init__()
        self.stack = build_dmrb_stack(
            StackSpec(
                in_channels=4,
                out_channels=6,
                widths=tuple(cfg.widths),
                blocks_per_scale=cfg.blocks_per_scale,
                gate_reduction=cfg.gate_reduction,
            )
        )
        lo, hi = cfg.gain_bounds
        # Shift the bounded activation so a zero pre-activation maps to zero
        # gain: an untrained head then starts at the identity relighting.
        p = (0.0 - lo) / (hi - lo)
        self.gain_lo = float(lo)
        self.gain_hi = float(hi)
        self.gain_offset = math.log(p / (1.0 - p))

    def forward(self, image, mask):
        raw = self.stack(torch.cat([image, mask], dim=1))
        span = self.gain_hi - self.gain_lo
        gain = self.gain_lo + span * torch.sigmoid(raw[:, :3] + self.gain_offset)
        estimate = torch.sigmoid(raw[:, 3:])
        return gain, estimate


class PriorGradientNet(nn.Module):
    """Predicts a bounded prior-gradient field from (gain, image, mask)."""

    def __init__(self, cfg):
        super().__init__()
        self.stack = build_dmrb_stack(
            StackSpec(
                in_channels=7,
                out_channels=3,
                widths=tuple(cfg.widths),
                blocks_per_scale=cfg.blocks_per_scale,
                gate_reduction=cfg.gate_reduction,
            )
        )
        self.max_magnitude = float(cfg.prior_grad_max)

    def forward(self, gain, image, mask):
        raw = self.stack(torch.cat([gain, image, mask], dim=1))
        return self.max_magnitude * torch.tanh(raw)


class SolverWeights(nn.Module):
    """All trainable state: init net, per-stage prior nets, step sizes."""

    def __init__(self, cfg, seed: int | None = None, stable_init: bool = True):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.cfg = cfg
        self.init_net = InitNet(cfg)
        count = 1 if cfg.share_prior_net else cfg.k
        self.prior_nets = nn.ModuleList(PriorGradientNet(cfg) for _ in range(count))
        self.step_sizes = nn.Parameter(
            torch.full((cfg.k,), float(cfg.step_size_init))
        )
        if not cfg.learn_step_size:
            self.step_sizes.requires_grad_(False)
        if stable_init:
            # Zeroed heads start the solver at the identity relighting and
            # reduce the first updates to the analytic terms.
            self.init_net.stack.zero_head_()
            for net in self.prior_nets:
                net.stack.zero_head_()
        self.to(torch_dtype(cfg.dtype))

    @property
    def version(self) -> str:
        return VERSION

    @property
    def config_hash(self) -> str:
        return solver_config_hash(self.cfg)

    def manifest(self) -> dict:
        return parameter_manifest(self)

    def prior_net_for(self, stage: int) -> PriorGradientNet:
        if not 0 <= stage < self.cfg.k:
            raise ValueError(f"stage {stage} outside [0, {self.cfg.k})")
        return self.prior_nets[0 if len(self.prior_nets) == 1 else stage]


def save_checkpoint(weights: SolverWeights, path, optimizer=None, extra=None) -> None:
    """Atomically write the checkpoint archive (temp file + rename)."""
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": weights.version,
        "config_hash": weights.config_hash,
        "manifest": {k: list(v) for k, v in weights.manifest().items()},
        "state_dict": weights.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": dict(extra or {}),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, cfg):
    """Load a checkpoint against `cfg`; returns (weights, payload).

    Raises WeightError when the stored manifest or config hash disagrees
    with a fresh build from `cfg`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise WeightError(f"{path} is not a recognized checkpoint archive")

    weights = SolverWeights(cfg, seed=None, stable_init=False)
    expected_hash = weights.config_hash
    stored_hash = payload.get("config_hash")
    if stored_hash != expected_hash:
        raise WeightError(
            f"checkpoint config hash {stored_hash} does not match requested "
            f"configuration {expected_hash}"
        )
    expected_manifest = {k: list(v) for k, v in weights.manifest().items()}
    if payload.get("manifest") != expected_manifest:
        raise WeightError(f"checkpoint manifest in {path} does not match configuration")
    weights.load_state_dict(payload["state_dict"])
    return weights, payload
