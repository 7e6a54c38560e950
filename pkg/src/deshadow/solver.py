"""K-stage unrolled variational solver for shadow relighting.

Each stage descends the gain field A on a three-term objective,

    fidelity(A)   = || est_prev - (1 + A) * img ||^2      (quadratic, analytic)
    mask_reg(A)   = || (1 - mask) * A ||^2                (quadratic, analytic)
    learned prior = network-predicted gradient field      (one net per stage)

then re-couples the estimate to the updated gain:

    A'   = clip(A - step * (g_fid + beta * g_mask + prior_weight * g_prior))
    est' = clip((1 + A') * img, 0, 1)

The fidelity gradient is evaluated with the estimate lagged from the
previous stage; the coupling assignment would otherwise zero it
identically at the start of every stage. Stage 0 comes from the
initialization network, whose estimate is an independent prediction, which
is what makes the fidelity term informative at stage 1.

The analytic gradient helpers accept numpy arrays or torch tensors; the
stage loop itself runs on batched N x C x H x W torch tensors (masks
N x 1 x H x W) so it can sit inside a training graph.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericsError, ShapeError
from .illumination import GAIN_BOUNDS, _broadcast_mask, _unwrap
from .imaging import SRGB, ImageTensor, ShadowMask
from .networks import SolverWeights, torch_dtype


@dataclass(frozen=True)
class SolverConfig:
    """Stage count, step size, objective weights, and network shape."""

    k: int = 3
    step_size_init: float = 0.1
    beta: float = 0.1
    prior_weight: float = 0.01
    share_prior_net: bool = False
    gain_bounds: tuple = GAIN_BOUNDS
    prior_grad_max: float = 5.0
    widths: tuple = (32, 64)
    blocks_per_scale: int = 2
    gate_reduction: int = 8
    learn_step_size: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one solver stage")
        if self.step_size_init <= 0:
            raise ValueError("step size must be positive")
        if self.beta < 0 or self.prior_weight < 0:
            raise ValueError("objective weights must be non-negative")
        lo, hi = self.gain_bounds
        if not (-1.0 < lo < 0.0 < hi):
            raise ValueError(f"gain bounds must satisfy -1 < lo < 0 < hi, got {self.gain_bounds}")
        if self.prior_grad_max <= 0:
            raise ValueError("prior gradient bound must be positive")
        torch_dtype(self.dtype)
        object.__setattr__(self, "gain_bounds", tuple(self.gain_bounds))
        object.__setattr__(self, "widths", tuple(self.widths))


@dataclass
class StageTrace:
    """Per-stage record: gain, estimates, and the three gradient fields."""

    stage: int
    gain: object
    estimate: object
    estimate_preclamp: object
    grad_fidelity: object = None
    grad_mask_reg: object = None
    grad_prior: object = None
    clamp_hits: int = 0


def fidelity_gradient(shadow_img, estimate_prev, gain):
    """d/dA of || est_prev - (1 + A) * img ||^2 = 2 ((1 + A) img - est_prev) img."""
    s, e, a = _unwrap(shadow_img), _unwrap(estimate_prev), _unwrap(gain)
    if not (s.shape == e.shape == a.shape):
        raise ShapeError(f"shape mismatch: img {s.shape}, estimate {e.shape}, gain {a.shape}")
    return 2.0 * ((1.0 + a) * s - e) * s


def mask_reg_gradient(gain, mask):
    """d/dA of || (1 - mask) * A ||^2 = 2 (1 - mask) * A for a binary mask."""
    a = _unwrap(gain)
    m = _broadcast_mask(_unwrap(mask), a)
    try:
        if np.broadcast_shapes(tuple(m.shape), tuple(a.shape)) != tuple(a.shape):
            raise ValueError
    except ValueError:
        raise ShapeError(f"mask shape {m.shape} does not broadcast to gain {a.shape}") from None
    return 2.0 * (1.0 - m) * a


def prior_gradient(gain, shadow_img, mask, stage: int, weights: SolverWeights):
    """Learned prior-gradient field for one stage (bounded by construction)."""
    net = weights.prior_net_for(stage)
    return net(gain, shadow_img, mask)


def descent_step(gain, grad_fid, grad_mask, grad_prior, step, beta, prior_weight):
    """One gain update: A - step * (g_fid + beta * g_mask + prior_weight * g_prior)."""
    return gain - step * (grad_fid + beta * grad_mask + prior_weight * grad_prior)


def unfold_step(
    state: StageTrace, shadow_img, mask, cfg: SolverConfig, weights: SolverWeights
) -> StageTrace:
    """Advance one stage: descend the gain, clip it, re-couple the estimate."""
    if state.stage >= cfg.k:
        raise ValueError(f"stage {state.stage} already at the configured maximum {cfg.k}")
    g_fid = fidelity_gradient(shadow_img, state.estimate, state.gain)
    g_mask = mask_reg_gradient(state.gain, mask)
    g_prior = prior_gradient(state.gain, shadow_img, mask, state.stage, weights)
    for name, g in (("fidelity", g_fid), ("mask_reg", g_mask), ("prior", g_prior)):
        if not torch.isfinite(g).all():
            raise NumericsError(
                f"non-finite {name} gradient at stage {state.stage}", stage=state.stage
            )

    step = weights.step_sizes[state.stage]
    raw = descent_step(state.gain, g_fid, g_mask, g_prior, step, cfg.beta, cfg.prior_weight)
    lo, hi = cfg.gain_bounds
    gain = raw.clip(lo, hi)
    pre = (1.0 + gain) * shadow_img
    estimate = pre.clip(0.0, 1.0)
    clamp_hits = int((raw != gain).sum()) + int((pre != estimate).sum())
    return StageTrace(
        stage=state.stage + 1,
        gain=gain,
        estimate=estimate,
        estimate_preclamp=pre,
        grad_fidelity=g_fid,
        grad_mask_reg=g_mask,
        grad_prior=g_prior,
        clamp_hits=clamp_hits,
    )


def run_solver(shadow_img, mask, cfg: SolverConfig, weights: SolverWeights):
    """Initialize then unroll K stages; returns (final estimate, K+1 traces)."""
    if shadow_img.ndim != 4 or shadow_img.shape[1] != 3:
        raise ShapeError(f"expected an Nx3xHxW batch, got {tuple(shadow_img.shape)}")
    if (
        mask.ndim != 4
        or mask.shape[1] != 1
        or mask.shape[-2:] != shadow_img.shape[-2:]
        or mask.shape[0] not in (1, shadow_img.shape[0])
    ):
        raise ShapeError(f"expected an Nx1xHxW mask matching the batch, got {tuple(mask.shape)}")
    gain0, est0 = weights.init_net(shadow_img, mask)
    traces = [StageTrace(stage=0, gain=gain0, estimate=est0, estimate_preclamp=est0)]
    for _ in range(cfg.k):
        traces.append(unfold_step(traces[-1], shadow_img, mask, cfg, weights))
    return traces[-1].estimate, traces


def image_to_batch(img: ImageTensor | np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    return torch.from_numpy(np.ascontiguousarray(data.transpose(2, 0, 1))).to(dtype)[None]


def mask_to_batch(mask: ShadowMask | np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    data = mask.data if isinstance(mask, ShadowMask) else np.asarray(mask)
    return torch.from_numpy(np.ascontiguousarray(data)).to(dtype)[None, None]


def batch_to_image(batch: torch.Tensor) -> ImageTensor:
    data = batch.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float64)
    return ImageTensor(np.clip(data, 0.0, 1.0), SRGB)


def solve_image(img: ImageTensor, mask: ShadowMask, weights: SolverWeights, cfg: SolverConfig):
    """Convenience single-image inference; returns (ImageTensor, traces)."""
    dtype = torch_dtype(cfg.dtype)
    with torch.no_grad():
        estimate, traces = run_solver(
            image_to_batch(img, dtype), mask_to_batch(mask, dtype), cfg, weights
        )
    return batch_to_image(estimate), traces
