"""Deep-supervised loss, dataset plumbing, and the optimization loop.

The loss supervises every stage of the unrolled solver:

    L = sum_n gamma * mean((truth - estimate_n)^2)
      + sum_n gamma_g * mean(((1 - mask) * gain_n)^2)

with the means taken over elements so the trade-off weights do not depend
on image resolution. The gain regularizer reuses the raw dataset mask, not
the dilated solver mask.
"""

import csv
import random
import time
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from . import imaging, mask_prior
from .errors import EmptyDatasetError, NumericsError, PairingError
from .illumination import _broadcast_mask, _unwrap
from .imaging import ImageTensor, ShadowMask
from .networks import SolverWeights, load_checkpoint, save_checkpoint, torch_dtype
from .solver import SolverConfig, run_solver

ISTD = "istd"
SRD = "srd"

# Luma-difference threshold for the fallback mask when a dataset ships no masks.
FALLBACK_MASK_THRESHOLD = 0.05


@dataclass
class TrainConfig:
    gamma: float = 1.0
    gamma_g: float = 0.01
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 8
    max_steps: int = 500
    seed: int = 0
    resize: int = 256
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.gamma_g < 0:
            raise ValueError("gamma_g must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.resize < 1:
            raise ValueError("training resize must be positive")


@dataclass
class TrainSample:
    shadow: ImageTensor
    ground_truth: ImageTensor
    mask: ShadowMask
    target_mask: ShadowMask
    image_id: str

    def __post_init__(self):
        shape = self.shadow.data.shape[:2]
        for name, arr in (
            ("ground_truth", self.ground_truth.data),
            ("mask", self.mask.data),
            ("target_mask", self.target_mask.data),
        ):
            if arr.shape[:2] != shape:
                raise ValueError(f"{name} shape {arr.shape[:2]} != shadow {shape}")


def loss_terms(traces, ground_truth, mask, gamma: float, gamma_g: float):
    """Return (total, fidelity, regularizer) summed over all stages."""
    if not traces:
        raise ValueError("need at least one stage trace")
    truth = _unwrap(ground_truth)
    m = _broadcast_mask(_unwrap(mask), traces[0].gain)
    fidelity = None
    reg = None
    for t in traces:
        for field in (t.estimate, t.gain):
            finite = torch.isfinite(field).all() if torch.is_tensor(field) else np.isfinite(field).all()
            if not finite:
                raise NumericsError(f"non-finite values in stage {t.stage} trace", stage=t.stage)
        f = ((truth - t.estimate) ** 2).mean()
        r = (((1.0 - m) * t.gain) ** 2).mean()
        fidelity = f if fidelity is None else fidelity + f
        reg = r if reg is None else reg + r
    return gamma * fidelity + gamma_g * reg, fidelity, reg


def loss(traces, ground_truth, mask, cfg: TrainConfig):
    """Deep-supervised scalar loss over all K+1 stage traces."""
    total, _, _ = loss_terms(traces, ground_truth, mask, cfg.gamma, cfg.gamma_g)
    return total


def _stems(folder: Path) -> dict:
    return {p.stem: p for p in sorted(folder.glob("*.png"))}


def _pair_or_raise(named_sets):
    keys = [set(s) for _, s in named_sets]
    common = set.intersection(*keys)
    orphans = []
    for name, stems in named_sets:
        for stem in sorted(set(stems) - common):
            orphans.append(f"{stem} (only in {name})")
    if orphans:
        raise PairingError("unpaired files: " + ", ".join(orphans))
    return sorted(common)


def _fallback_mask(shadow: ImageTensor, truth: ImageTensor) -> ShadowMask:
    # Shadowed pixels are darker in the input than in the shadow-free truth.
    diff = imaging.luma(truth) - imaging.luma(shadow)
    return ShadowMask((diff > FALLBACK_MASK_THRESHOLD).astype(np.float64))


def load_dataset(
    root,
    split: str = "train",
    layout: str = ISTD,
    resize: int | None = 256,
    mask_dilation: int = 2,
    candidate_root=None,
    selection: mask_prior.SelectionConfig | None = None,
) -> list:
    """Load paired triplets in deterministic (sorted) order.

    ISTD layout: ``<root>/<split>_A`` (shadow), ``_B`` (mask), ``_C``
    (shadow-free). SRD layout: ``shadow/`` and ``shadow_free/`` under
    ``<root>/<split>`` or ``<root>``, with the mask recovered from the
    luma difference. When `candidate_root` holds segmentation candidates
    for an image, the target mask comes from the selection pipeline,
    otherwise from the dilated dataset/fallback mask.
    """
    root = Path(root)
    samples = []
    if layout == ISTD:
        dirs = {suffix: root / f"{split}_{suffix}" for suffix in "ABC"}
        for name, d in dirs.items():
            if not d.is_dir():
                raise FileNotFoundError(f"missing dataset directory {d}")
        files = {name: _stems(d) for name, d in dirs.items()}
        ids = _pair_or_raise([(str(dirs[n]), files[n]) for n in "ABC"])
        if not ids:
            raise EmptyDatasetError(f"no samples under {root} for split {split}")
        for image_id in ids:
            shadow = imaging.load_image(files["A"][image_id])
            mask = imaging.load_mask(files["B"][image_id])
            truth = imaging.load_image(files["C"][image_id])
            samples.append(
                _build_sample(
                    image_id, shadow, truth, mask, resize, mask_dilation,
                    candidate_root, selection,
                )
            )
    elif layout == SRD:
        base = root / split if (root / split / "shadow").is_dir() else root
        s_dir, f_dir = base / "shadow", base / "shadow_free"
        for d in (s_dir, f_dir):
            if not d.is_dir():
                raise FileNotFoundError(f"missing dataset directory {d}")
        s_files, f_files = _stems(s_dir), _stems(f_dir)
        ids = _pair_or_raise([(str(s_dir), s_files), (str(f_dir), f_files)])
        if not ids:
            raise EmptyDatasetError(f"no samples under {base}")
        for image_id in ids:
            shadow = imaging.load_image(s_files[image_id])
            truth = imaging.load_image(f_files[image_id])
            samples.append(
                _build_sample(
                    image_id, shadow, truth, None, resize, mask_dilation,
                    candidate_root, selection,
                )
            )
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return samples


def _build_sample(
    image_id, shadow, truth, mask, resize, mask_dilation, candidate_root, selection
) -> TrainSample:
    target = None
    if candidate_root is not None:
        try:
            cands = mask_prior.load_candidates(
                candidate_root, image_id, image_shape=shadow.data.shape[:2]
            )
            target = mask_prior.select_shadow_mask(shadow, cands, selection).mask
        except mask_prior.EmptyCandidatesError:
            target = None

    if resize is not None:
        shadow = imaging.resize(shadow, resize, resize)
        truth = imaging.resize(truth, resize, resize)
        if mask is not None:
            mask = imaging.resize_mask(mask, resize, resize)
        if target is not None:
            target = imaging.resize_mask(target, resize, resize)
    if mask is None:
        mask = _fallback_mask(shadow, truth)
    if target is None:
        target = imaging.dilate(mask, mask_dilation)
    return TrainSample(shadow, truth, mask, target, image_id)


def make_overfit_set(
    count: int = 8,
    size: int = 64,
    seed: int = 0,
    gain_range: tuple = (0.5, 1.5),
) -> list:
    """Synthetic triplets made by inverting the relighting model.

    Each sample darkens a random rectangle of a smooth base image by
    1 / (1 + gain) with a known constant gain, so the exact solution is
    recoverable and a solver that learns anything useful must brighten
    the rectangle back.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        coarse = rng.uniform(0.25, 0.95, size=(6, 6, 3))
        base = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_LINEAR)
        truth = ImageTensor(np.clip(base, 0.0, 1.0))

        rect_h = int(rng.integers(size // 4, size // 2 + 1))
        rect_w = int(rng.integers(size // 4, size // 2 + 1))
        y0 = int(rng.integers(1, size - rect_h))
        x0 = int(rng.integers(1, size - rect_w))
        mask = np.zeros((size, size))
        mask[y0 : y0 + rect_h, x0 : x0 + rect_w] = 1.0

        gain = float(rng.uniform(*gain_range))
        m3 = mask[..., None]
        shadow = truth.data * (m3 / (1.0 + gain) + (1.0 - m3))
        samples.append(
            TrainSample(
                shadow=ImageTensor(shadow),
                ground_truth=truth,
                mask=ShadowMask(mask),
                target_mask=imaging.dilate(ShadowMask(mask), 0),
                image_id=f"synth_{i:03d}",
            )
        )
    return samples


def export_istd_layout(samples, root, split: str = "train") -> None:
    """Write samples to disk in the ISTD directory layout."""
    root = Path(root)
    for suffix in "ABC":
        (root / f"{split}_{suffix}").mkdir(parents=True, exist_ok=True)
    for s in samples:
        imaging.save_image(s.shadow, root / f"{split}_A" / f"{s.image_id}.png")
        imaging.save_mask(s.mask, root / f"{split}_B" / f"{s.image_id}.png")
        imaging.save_image(s.ground_truth, root / f"{split}_C" / f"{s.image_id}.png")


def _stack_samples(samples, dtype):
    def img_stack(arrs):
        return torch.stack(
            [torch.from_numpy(a.transpose(2, 0, 1).copy()).to(dtype) for a in arrs]
        )

    shadow = img_stack([s.shadow.data for s in samples])
    truth = img_stack([s.ground_truth.data for s in samples])
    mask = torch.stack(
        [torch.from_numpy(s.mask.data.copy()).to(dtype)[None] for s in samples]
    )
    target = torch.stack(
        [torch.from_numpy(s.target_mask.data.copy()).to(dtype)[None] for s in samples]
    )
    return shadow, truth, mask, target


def train(
    cfg: TrainConfig,
    solver_cfg: SolverConfig,
    samples,
    out_dir,
    resume_from=None,
) -> SolverWeights:
    """End-to-end optimization of all solver weights with Adam.

    Writes `checkpoint.pt` (atomic, includes optimizer state) and
    `loss_trace.csv` under `out_dir`. Aborts with NumericsError on a
    non-finite loss, leaving the last good checkpoint in place. With
    max_steps = 0 the initialized weights are returned and checkpointed
    unchanged.
    """
    if not samples:
        raise EmptyDatasetError("no training samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.pt"
    trace_path = out_dir / "loss_trace.csv"

    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed % 2**32)
    random.seed(cfg.seed)

    dtype = torch_dtype(solver_cfg.dtype)
    if resume_from is not None:
        weights, payload = load_checkpoint(resume_from, solver_cfg)
    else:
        weights, payload = SolverWeights(solver_cfg, seed=cfg.seed), None
    optimizer = torch.optim.Adam(
        [p for p in weights.parameters() if p.requires_grad],
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
    )
    if payload is not None and payload.get("optimizer") is not None:
        optimizer.load_state_dict(payload["optimizer"])

    shadow, truth, mask, target = _stack_samples(samples, dtype)
    n = shadow.shape[0]
    batch = min(cfg.batch_size, n)

    save_checkpoint(weights, ckpt_path, optimizer, extra={"step": 0})
    rows = []
    rng = np.random.default_rng(cfg.seed)
    queue = []
    start = time.perf_counter()
    full_batch = batch == n
    try:
        for step in range(1, cfg.max_steps + 1):
            if full_batch:
                # A full batch is order-independent up to float accumulation;
                # keep a fixed order so the loss trace stays smooth.
                idx = torch.arange(n)
            else:
                if len(queue) < batch:
                    queue.extend(rng.permutation(n).tolist())
                idx = torch.tensor([queue.pop(0) for _ in range(batch)])

            _, traces = run_solver(shadow[idx], target[idx], solver_cfg, weights)
            total, fidelity, reg = loss_terms(
                traces, truth[idx], mask[idx], cfg.gamma, cfg.gamma_g
            )
            if not torch.isfinite(total):
                raise NumericsError(f"loss diverged at step {step}")

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            rows.append(
                (
                    step,
                    float(total.detach()),
                    float(fidelity.detach()),
                    float(reg.detach()),
                    time.perf_counter() - start,
                )
            )
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(weights, ckpt_path, optimizer, extra={"step": step})
    finally:
        _write_trace(trace_path, rows)

    save_checkpoint(weights, ckpt_path, optimizer, extra={"step": cfg.max_steps})
    return weights


def _write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "fidelity_term", "reg_term", "seconds"])
        for step, total, fidelity, reg, seconds in rows:
            writer.writerow(
                [step, f"{total:.12g}", f"{fidelity:.12g}", f"{reg:.12g}", f"{seconds:.3f}"]
            )


def read_trace(path) -> list:
    """Parse a loss_trace.csv back into (step, loss, fidelity, reg) tuples."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                (
                    int(row["step"]),
                    float(row["loss"]),
                    float(row["fidelity_term"]),
                    float(row["reg_term"]),
                )
            )
    return out
