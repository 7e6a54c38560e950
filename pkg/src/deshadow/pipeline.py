"""Pipeline configuration (flat-key JSON) and end-to-end inference helpers.

The config file is a single JSON object with flat dotted keys, e.g.::

    {"solver.k": 3, "train.max_steps": 500, "paths.dataset_root": "data/istd"}

Unknown keys are rejected. The config hash is computed over the resolved
(defaults + file) mapping with sorted keys, so it does not depend on key
order in the file and is printed by every command for provenance; CLI flag
overrides apply after hashing.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .illumination import CurveParams, blend_final, enhance_second_order
from .imaging import ImageTensor, ShadowMask
from .mask_prior import SelectionConfig
from .networks import SolverWeights, torch_dtype
from .solver import SolverConfig, run_solver, image_to_batch, mask_to_batch, batch_to_image
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "alpha": 0.0,
    "jobs": 0,  # 0 = one worker per logical core
    "curve.a1": 0.0,
    "curve.a2": 0.0,
    "solver.k": 3,
    "solver.step_size_init": 0.1,
    "solver.beta": 0.1,
    "solver.prior_weight": 0.01,
    "solver.share_prior_net": False,
    "solver.gain_min": -0.99,
    "solver.gain_max": 10.0,
    "solver.prior_grad_max": 5.0,
    "solver.widths": [32, 64],
    "solver.blocks_per_scale": 2,
    "solver.gate_reduction": 8,
    "solver.learn_step_size": True,
    "solver.dtype": "float32",
    "train.gamma": 1.0,
    "train.gamma_g": 0.01,
    "train.learning_rate": 1e-4,
    "train.adam_beta1": 0.9,
    "train.adam_beta2": 0.999,
    "train.batch_size": 8,
    "train.max_steps": 500,
    "train.resize": 256,
    "train.checkpoint_every": 100,
    "train.layout": "istd",
    "train.split": "train",
    "train.mask_dilation": 2,
    "select.darkness_threshold": 0.25,
    "select.min_area": 0.005,
    "select.max_area": 0.6,
    "select.dilation_radius": 2,
    "select.ring_radius": 5,
    "eval.resize": 256,
    "eval.true_rmse": False,
    "paths.dataset_root": None,
    "paths.candidate_root": None,
    "paths.fallback_mask_dir": None,
    "paths.target_mask_dir": None,
    "paths.checkpoint": None,
    "paths.output_dir": "out",
}


@dataclass
class PipelineConfig:
    solver: SolverConfig
    train: TrainConfig
    select: SelectionConfig
    alpha: float
    curve: CurveParams
    seed: int
    jobs: int
    eval_resize: int
    true_rmse: bool
    paths: dict
    config_hash: str
    flat: dict = field(repr=False, default_factory=dict)


def config_hash_of(flat: dict) -> str:
    return hashlib.sha256(
        json.dumps(flat, sort_keys=True, default=str).encode()
    ).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Resolve defaults + JSON file + CLI overrides into a PipelineConfig."""
    flat = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"no such config file: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise FormatError(f"{p}: config must be a JSON object of flat keys")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise FormatError(f"{p}: unknown config keys {unknown}")
        flat.update(loaded)
    digest = config_hash_of(flat)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise FormatError(f"unknown config override {key!r}")
        flat[key] = value
    return _build(flat, digest)


def _build(flat: dict, digest: str) -> PipelineConfig:
    def section(prefix):
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in flat.items() if k.startswith(prefix + ".")}

    s = section("solver")
    solver = SolverConfig(
        k=int(s["k"]),
        step_size_init=float(s["step_size_init"]),
        beta=float(s["beta"]),
        prior_weight=float(s["prior_weight"]),
        share_prior_net=bool(s["share_prior_net"]),
        gain_bounds=(float(s["gain_min"]), float(s["gain_max"])),
        prior_grad_max=float(s["prior_grad_max"]),
        widths=tuple(int(w) for w in s["widths"]),
        blocks_per_scale=int(s["blocks_per_scale"]),
        gate_reduction=int(s["gate_reduction"]),
        learn_step_size=bool(s["learn_step_size"]),
        dtype=str(s["dtype"]),
    )
    t = section("train")
    train = TrainConfig(
        gamma=float(t["gamma"]),
        gamma_g=float(t["gamma_g"]),
        learning_rate=float(t["learning_rate"]),
        adam_beta1=float(t["adam_beta1"]),
        adam_beta2=float(t["adam_beta2"]),
        batch_size=int(t["batch_size"]),
        max_steps=int(t["max_steps"]),
        seed=int(flat["seed"]),
        resize=int(t["resize"]),
        checkpoint_every=int(t["checkpoint_every"]),
    )
    sel = section("select")
    select = SelectionConfig(
        darkness_threshold=float(sel["darkness_threshold"]),
        min_area=float(sel["min_area"]),
        max_area=float(sel["max_area"]),
        dilation_radius=int(sel["dilation_radius"]),
        ring_radius=int(sel["ring_radius"]),
    )
    return PipelineConfig(
        solver=solver,
        train=train,
        select=select,
        alpha=float(flat["alpha"]),
        curve=CurveParams(float(flat["curve.a1"]), float(flat["curve.a2"])),
        seed=int(flat["seed"]),
        jobs=int(flat["jobs"]) or (os.cpu_count() or 1),
        eval_resize=int(flat["eval.resize"]),
        true_rmse=bool(flat["eval.true_rmse"]),
        paths={k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("paths.")},
        config_hash=digest,
        flat=flat,
    )


def remove_shadows(
    img: ImageTensor,
    mask: ShadowMask,
    weights: SolverWeights,
    solver_cfg: SolverConfig,
    alpha: float = 0.0,
    curve: CurveParams | None = None,
):
    """Full inference for one image: solve, enhance, blend.

    Returns (final, estimate, traces): `estimate` is the solver output, and
    `final` blends the enhancement-curve image with it by `alpha` (alpha 0
    reproduces the estimate exactly, alpha 1 the curve image).
    """
    dtype = torch_dtype(solver_cfg.dtype)
    with torch.no_grad():
        est_t, traces = run_solver(
            image_to_batch(img, dtype), mask_to_batch(mask, dtype), solver_cfg, weights
        )
    estimate = batch_to_image(est_t)
    enhanced = enhance_second_order(img, curve or CurveParams(0.0, 0.0))
    final = blend_final(enhanced, estimate, alpha)
    return final, estimate, traces


def normalize_gain(gain: np.ndarray) -> np.ndarray:
    """Min-max map of a gain field into [0, 1] for visualization."""
    lo, hi = float(gain.min()), float(gain.max())
    if hi == lo:
        return np.zeros_like(gain)
    return (gain - lo) / (hi - lo)
