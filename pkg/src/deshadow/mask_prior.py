"""Turn externally produced segmentation candidates into one shadow target mask.

A promptable segmentation model (run elsewhere) drops one binary PNG per
candidate region under ``<candidate_root>/<image_id>/``. This module scores
each candidate by how much darker it is than a thin surrounding ring, keeps
the dark ones, unions them, and dilates the union into the target mask fed
to the solver. Shadows are locally darker than their immediate surround, and
the ratio form of the darkness score makes it robust to global exposure.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .errors import DegenerateRegionError, EmptyCandidatesError, FormatError
from .imaging import ImageTensor, ShadowMask

_EPS = 1e-6


@dataclass
class CandidateMask:
    """One raw candidate region plus bookkeeping."""

    mask: ShadowMask
    source_id: str
    area_fraction: float

    def __post_init__(self):
        if abs(self.area_fraction - self.mask.fraction) > 1e-9:
            raise ValueError(
                f"area_fraction {self.area_fraction} does not match mask "
                f"({self.mask.fraction})"
            )


@dataclass
class ShadowScore:
    """Darkness of a region relative to its surrounding ring.

    darkness = 1 - mean(region luma) / (mean(ring luma) + eps), floored at -1.
    """

    darkness: float
    ring_contrast: float
    chroma_shift: float


@dataclass
class SelectionConfig:
    darkness_threshold: float = 0.25
    min_area: float = 0.005
    max_area: float = 0.6
    dilation_radius: int = 2
    ring_radius: int = 5


@dataclass
class SelectionResult:
    mask: ShadowMask
    chosen_ids: list
    low_confidence: bool
    scores: dict = field(default_factory=dict)


def load_candidates(candidate_root, image_id: str, image_shape=None) -> list:
    """Load all candidate masks for one image.

    Layout: ``<candidate_root>/<image_id>/<k>.png``, single-channel, value
    above 127 means set. An optional ``meta.json`` holding a list of
    ``{"id": ..., "area": ...}`` entries is cross-checked when present.
    """
    folder = Path(candidate_root) / image_id
    files = sorted(folder.glob("*.png")) if folder.is_dir() else []
    if not files:
        raise EmptyCandidatesError(f"no candidate masks under {folder}")

    meta = {}
    meta_path = folder / "meta.json"
    if meta_path.exists():
        try:
            entries = json.loads(meta_path.read_text())
            meta = {str(e["id"]): int(e["area"]) for e in entries}
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed {meta_path}: {exc}") from exc

    candidates = []
    reference = tuple(image_shape) if image_shape is not None else None
    for path in files:
        try:
            mask = imaging.load_mask(path, single_channel_only=True)
        except imaging.DecodeError as exc:
            raise FormatError(str(exc)) from exc
        if reference is None:
            reference = mask.data.shape
        if mask.data.shape != reference:
            raise FormatError(
                f"candidate {path} has shape {mask.data.shape}, expected {reference}"
            )
        if path.stem in meta and int(mask.data.sum()) != meta[path.stem]:
            raise FormatError(
                f"candidate {path} area {int(mask.data.sum())} disagrees with "
                f"meta.json ({meta[path.stem]})"
            )
        candidates.append(
            CandidateMask(mask=mask, source_id=path.stem, area_fraction=mask.fraction)
        )
    return candidates


def score_candidate(
    img: ImageTensor, cand: CandidateMask, ring_radius: int = 5
) -> ShadowScore:
    """Score a candidate against the ring of pixels just outside it."""
    if ring_radius < 1:
        raise ValueError(f"ring_radius must be >= 1, got {ring_radius}")
    region = cand.mask.data.astype(bool)
    ring = imaging.dilate(cand.mask, ring_radius).data.astype(bool) & ~region
    if not region.any() or not ring.any():
        raise DegenerateRegionError(
            f"candidate {cand.source_id}: empty region or ring"
        )

    y = imaging.luma(img)
    region_luma = float(y[region].mean())
    ring_luma = float(y[ring].mean())
    darkness = max(1.0 - region_luma / (ring_luma + _EPS), -1.0)

    lab = imaging.srgb_to_lab(img).data
    region_ab = lab[region][:, 1:].mean(axis=0)
    ring_ab = lab[ring][:, 1:].mean(axis=0)
    return ShadowScore(
        darkness=darkness,
        ring_contrast=ring_luma - region_luma,
        chroma_shift=float(np.abs(region_ab - ring_ab).sum()),
    )


def select_shadow_mask(
    img: ImageTensor, candidates: list, cfg: SelectionConfig | None = None
) -> SelectionResult:
    """Union the dark, plausibly sized candidates and dilate the result.

    When nothing clears the darkness threshold, the single darkest candidate
    is used instead and the result is flagged low-confidence, so the caller
    never receives an empty mask.
    """
    if not candidates:
        raise EmptyCandidatesError("no candidates to select from")
    cfg = cfg or SelectionConfig()

    scores = {}
    for cand in candidates:
        try:
            scores[cand.source_id] = score_candidate(img, cand, cfg.ring_radius)
        except DegenerateRegionError:
            continue
    if not scores:
        raise DegenerateRegionError("every candidate had an empty region or ring")

    def area_ok(cand):
        return cfg.min_area <= cand.area_fraction <= cfg.max_area

    passing = [
        c
        for c in candidates
        if c.source_id in scores
        and scores[c.source_id].darkness >= cfg.darkness_threshold
        and area_ok(c)
    ]

    low_confidence = not passing
    if passing:
        chosen = passing
    else:
        pool = [c for c in candidates if c.source_id in scores and area_ok(c)]
        if not pool:
            pool = [c for c in candidates if c.source_id in scores]
        chosen = [max(pool, key=lambda c: scores[c.source_id].darkness)]

    union = np.zeros_like(chosen[0].mask.data)
    for cand in chosen:
        union = np.maximum(union, cand.mask.data)
    dilated = imaging.dilate(ShadowMask(union), cfg.dilation_radius)
    return SelectionResult(
        mask=dilated,
        chosen_ids=sorted(c.source_id for c in chosen),
        low_confidence=low_confidence,
        scores=scores,
    )
