"""Region-wise metric suite: LAB error, PSNR, SSIM over shadow/non-shadow/all.

The headline "RMSE" follows the shadow-removal benchmark convention: the
mean absolute per-pixel LAB error (mean over the three channels, then over
the region), despite the name. A literal root-mean-square variant is
available behind the `true_rmse` flag. PSNR uses region-restricted RGB MSE
against a unit peak; SSIM is computed as a full-image map on luma (11x11
Gaussian window, sigma 1.5) and then averaged over the region so windows
near region borders stay well defined.
"""

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imaging
from .errors import DegenerateRegionError, PairingError
from .imaging import LAB, ImageTensor, ShadowMask

REGION_ALL = "all"
REGION_SHADOW = "shadow"
REGION_NONSHADOW = "nonshadow"

PSNR_CAP = 99.0

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11x11 window
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2

CSV_COLUMNS = [
    "id",
    "rmse_all", "rmse_n", "rmse_s",
    "ssim", "ssim_n", "ssim_s",
    "psnr", "psnr_n", "psnr_s",
]

# (report header, csv column, higher-is-better)
TABLE_COLUMNS = [
    ("RMSE-all", "rmse_all", False),
    ("RMSE-N", "rmse_n", False),
    ("RMSE-S", "rmse_s", False),
    ("SSIM", "ssim", True),
    ("SSIM-N", "ssim_n", True),
    ("SSIM-S", "ssim_s", True),
    ("PSNR", "psnr", True),
    ("PSNR-N", "psnr_n", True),
    ("PSNR-S", "psnr_s", True),
]


@dataclass
class RegionMetrics:
    rmse_all: float
    rmse_n: float
    rmse_s: float
    ssim: float
    ssim_n: float
    ssim_s: float
    psnr: float
    psnr_n: float
    psnr_s: float

    def as_row(self, image_id: str) -> list:
        return [image_id] + [getattr(self, f.name) for f in fields(self)]


def _region_selector(mask, region: str, shape) -> np.ndarray:
    if region == REGION_ALL:
        return np.ones(shape, dtype=bool)
    if mask is None:
        raise DegenerateRegionError(f"region {region!r} requested without a mask")
    m = mask.data if isinstance(mask, ShadowMask) else np.asarray(mask)
    selector = m.astype(bool) if region == REGION_SHADOW else ~m.astype(bool)
    if not selector.any():
        raise DegenerateRegionError(f"region {region!r} is empty")
    return selector


def _to_lab(img: ImageTensor) -> np.ndarray:
    return img.data if img.color_space == LAB else imaging.srgb_to_lab(img).data


def rmse_lab(
    pred: ImageTensor,
    gt: ImageTensor,
    mask=None,
    region: str = REGION_ALL,
    true_rmse: bool = False,
) -> float:
    """Benchmark LAB error over a region (channel-mean absolute by default)."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    delta = _to_lab(pred) - _to_lab(gt)
    selector = _region_selector(mask, region, pred.data.shape[:2])
    if true_rmse:
        return float(np.sqrt((delta[selector] ** 2).mean()))
    return float(np.abs(delta).mean(axis=2)[selector].mean())


def psnr_region(pred: ImageTensor, gt: ImageTensor, mask=None, region: str = REGION_ALL) -> float:
    """PSNR in dB from region-restricted RGB MSE; identical inputs cap at 99."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    selector = _region_selector(mask, region, pred.data.shape[:2])
    mse = float(((pred.data - gt.data)[selector] ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def _gaussian_blur(x: np.ndarray) -> np.ndarray:
    offsets = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1)
    kernel = np.exp(-(offsets**2) / (2.0 * _SSIM_SIGMA**2))
    kernel /= kernel.sum()
    out = ndimage.correlate1d(x, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def ssim_map(pred: ImageTensor, gt: ImageTensor) -> np.ndarray:
    """Full-image SSIM map on luma with the standard constants."""
    h, w = pred.data.shape[:2]
    window = 2 * _SSIM_RADIUS + 1
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than the {window}x{window} SSIM window")
    x = imaging.luma(pred)
    y = imaging.luma(gt)
    mu_x = _gaussian_blur(x)
    mu_y = _gaussian_blur(y)
    var_x = _gaussian_blur(x * x) - mu_x * mu_x
    var_y = _gaussian_blur(y * y) - mu_y * mu_y
    cov = _gaussian_blur(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return num / den


def ssim_region(pred: ImageTensor, gt: ImageTensor, mask=None, region: str = REGION_ALL) -> float:
    """Mean of the full-image SSIM map over the selected region."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    selector = _region_selector(mask, region, pred.data.shape[:2])
    return float(ssim_map(pred, gt)[selector].mean())


def compute_metrics(pred, gt, mask=None, true_rmse: bool = False) -> RegionMetrics:
    """All nine region metrics for one image pair.

    Degenerate regions (an all-set or all-clear mask, or no mask at all)
    yield NaN for the affected region columns rather than failing the run.
    """

    def safe(fn, region):
        try:
            return fn(region)
        except DegenerateRegionError:
            return float("nan")

    return RegionMetrics(
        rmse_all=rmse_lab(pred, gt, mask, REGION_ALL, true_rmse),
        rmse_n=safe(lambda r: rmse_lab(pred, gt, mask, r, true_rmse), REGION_NONSHADOW),
        rmse_s=safe(lambda r: rmse_lab(pred, gt, mask, r, true_rmse), REGION_SHADOW),
        ssim=ssim_region(pred, gt, mask, REGION_ALL),
        ssim_n=safe(lambda r: ssim_region(pred, gt, mask, r), REGION_NONSHADOW),
        ssim_s=safe(lambda r: ssim_region(pred, gt, mask, r), REGION_SHADOW),
        psnr=psnr_region(pred, gt, mask, REGION_ALL),
        psnr_n=safe(lambda r: psnr_region(pred, gt, mask, r), REGION_NONSHADOW),
        psnr_s=safe(lambda r: psnr_region(pred, gt, mask, r), REGION_SHADOW),
    )


def _aggregate(per_image: list) -> RegionMetrics:
    values = {
        f.name: np.array([getattr(m, f.name) for _, m in per_image])
        for f in fields(RegionMetrics)
    }
    def mean(arr):
        finite = arr[np.isfinite(arr)]
        return float(finite.mean()) if finite.size else float("nan")
    return RegionMetrics(**{name: mean(arr) for name, arr in values.items()})


def evaluate_dir(
    pred_dir,
    gt_dir,
    mask_dir=None,
    resize: int | None = 256,
    out_dir=None,
    true_rmse: bool = False,
    jobs: int = 1,
):
    """Score every stem-paired (pred, gt[, mask]) triple in two directories.

    Returns (per_image, aggregate) where per_image is a sorted list of
    (image_id, RegionMetrics). When `out_dir` is given, writes `metrics.csv`
    (one row per image plus a `__mean__` row) and a `report.md` table.
    Without a mask directory, region columns fall back to a luma-difference
    mask between gt and pred (degenerate regions come back as NaN).
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    orphans = [f"{s} (only in {pred_dir})" for s in sorted(set(preds) - set(gts))]
    orphans += [f"{s} (only in {gt_dir})" for s in sorted(set(gts) - set(preds))]
    if orphans:
        raise PairingError("unpaired files: " + ", ".join(orphans))
    if not preds:
        raise PairingError(f"no PNG pairs between {pred_dir} and {gt_dir}")

    mask_paths = {}
    if mask_dir is not None:
        mask_dir = Path(mask_dir)
        for stem in preds:
            candidates = [mask_dir / f"{stem}.png", mask_dir / f"{stem}_Ms.png"]
            found = next((c for c in candidates if c.exists()), None)
            if found is None:
                raise PairingError(f"no mask for {stem} under {mask_dir}")
            mask_paths[stem] = found

    def score_one(stem):
        pred = imaging.load_image(preds[stem])
        gt = imaging.load_image(gts[stem])
        if resize is not None:
            pred = imaging.resize(pred, resize, resize)
            gt = imaging.resize(gt, resize, resize)
        if mask_dir is not None:
            mask = imaging.load_mask(mask_paths[stem])
            mask = imaging.resize_mask(mask, *pred.data.shape[:2])
        else:
            diff = imaging.luma(gt) - imaging.luma(pred)
            mask = ShadowMask((diff > 0.05).astype(np.float64))
        return stem, compute_metrics(pred, gt, mask, true_rmse)

    stems = sorted(preds)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_image = sorted(pool.map(score_one, stems))
    else:
        per_image = [score_one(s) for s in stems]

    aggregate = _aggregate(per_image)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", per_image, aggregate)
        (out_dir / "report.md").write_text(
            render_table([(stem, m) for stem, m in per_image] + [("__mean__", aggregate)])
        )
    return per_image, aggregate


def write_metrics_csv(path, per_image, aggregate) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for stem, metrics in per_image:
            writer.writerow([stem] + [_fmt(v) for v in metrics.as_row(stem)[1:]])
        writer.writerow(["__mean__"] + [_fmt(v) for v in aggregate.as_row("")[1:]])


def _fmt(value: float) -> str:
    return "nan" if not np.isfinite(value) else f"{value:.6f}"


def read_metrics_csv(path) -> list:
    """Parse a metrics.csv back into (id, RegionMetrics) rows."""
    from .errors import FormatError

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise FormatError(f"{path}:1: expected columns {CSV_COLUMNS}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            rows.append((row[0], RegionMetrics(*values)))
    return rows


def render_table(rows, label_header: str = "Image", bold_best: bool = False) -> str:
    """Markdown table in the benchmark style, with direction markers."""
    headers = [label_header] + [
        f"{name}{'↑' if up else '↓'}" for name, _, up in TABLE_COLUMNS
    ]
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    best = {}
    if bold_best and len(rows) > 1:
        for _, column, up in TABLE_COLUMNS:
            values = [getattr(m, column) for _, m in rows if np.isfinite(getattr(m, column))]
            if values:
                best[column] = max(values) if up else min(values)
    for label, metrics in rows:
        cells = [str(label)]
        for _, column, _ in TABLE_COLUMNS:
            v = getattr(metrics, column)
            cell = "nan" if not np.isfinite(v) else f"{v:.3f}"
            if column in best and np.isfinite(v) and v == best[column]:
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
