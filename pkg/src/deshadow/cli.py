"""Command-line front end: prep-mask | train | infer | eval | report.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerics error.
Every command prints the resolved config hash for provenance. The
DESHADOW_CACHE environment variable, when set, caches prep-mask outputs
keyed by the selection config.
"""

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, imaging, mask_prior, training
from .errors import DeshadowError, NumericsError, PairingError
from .imaging import ImageTensor
from .networks import load_checkpoint
from .pipeline import load_config, normalize_gain, remove_shadows


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common_flags(parser):
    parser.add_argument("--config", default=None, help="flat-key JSON config file")
    parser.add_argument("--jobs", type=int, default=None, help="worker threads per image")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="enhancement blend weight")
    parser.add_argument("--resize", type=int, default=None, help="evaluation/training resize")
    parser.add_argument("--true-rmse", action="store_true", help="literal root-mean-square LAB error")
    parser.add_argument("--out", default=None, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="deshadow", description="Shadow removal toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep-mask", help="select shadow target masks from candidates")
    _common_flags(p)
    p.add_argument("images", help="image file or directory of PNGs")
    p.add_argument("--candidates", default=None, help="candidate mask root")
    p.add_argument("--fallback-masks", default=None, help="dataset mask directory fallback")
    p.set_defaults(func=cmd_prep_mask)

    p = sub.add_parser("train", help="train the unrolled solver")
    _common_flags(p)
    p.add_argument("--data", default=None, help="dataset root (overrides config)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="remove shadows from a directory of images")
    _common_flags(p)
    p.add_argument("inputs", help="directory of input PNGs")
    p.add_argument("checkpoint", help="trained checkpoint archive")
    p.add_argument("--masks", default=None, help="target mask directory")
    p.add_argument("--dump-stages", action="store_true", help="save per-stage estimates and gains")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _common_flags(p)
    p.add_argument("pred", help="prediction directory")
    p.add_argument("gt", help="ground-truth directory")
    p.add_argument("mask", nargs="?", default=None, help="mask directory (optional)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge metrics files into a comparison report")
    _common_flags(p)
    p.add_argument("metrics", nargs="+", help="metrics.csv files")
    p.add_argument(
        "--strips",
        default=None,
        help="input_dir,result_dir,mask_dir for side-by-side strips",
    )
    p.set_defaults(func=cmd_report)
    return parser


def _overrides(args) -> dict:
    overrides = {}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.resize is not None:
        overrides["eval.resize"] = args.resize
        overrides["train.resize"] = args.resize
    if args.true_rmse:
        overrides["eval.true_rmse"] = True
    return overrides


def _load(args):
    cfg = load_config(args.config, _overrides(args))
    print(f"config hash: {cfg.config_hash}")
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path(cfg.paths["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _list_images(path) -> list:
    p = Path(path)
    if p.is_file():
        return [p]
    if p.is_dir():
        files = sorted(p.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG images under {p}")
        return files
    raise FileNotFoundError(f"no such image or directory: {p}")


def _map_jobs(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def cmd_prep_mask(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    candidate_root = args.candidates or cfg.paths["candidate_root"]
    fallback_dir = args.fallback_masks or cfg.paths["fallback_mask_dir"]
    images = _list_images(args.images)

    cache_dir = None
    if os.environ.get("DESHADOW_CACHE"):
        sel_key = hashlib.sha256(
            json.dumps(vars(cfg.select), sort_keys=True).encode()
        ).hexdigest()[:16]
        cache_dir = Path(os.environ["DESHADOW_CACHE"]) / sel_key
        cache_dir.mkdir(parents=True, exist_ok=True)

    def one(img_path):
        image_id = img_path.stem
        mask_out = out / f"{image_id}_Ms.png"
        if cache_dir is not None:
            cached_png = cache_dir / f"{image_id}_Ms.png"
            cached_row = cache_dir / f"{image_id}.json"
            if cached_png.exists() and cached_row.exists():
                shutil.copyfile(cached_png, mask_out)
                return json.loads(cached_row.read_text())

        row = {"id": image_id, "darkness": "", "ring_contrast": "",
               "chroma_shift": "", "chosen_ids": "", "low_confidence": "", "error": ""}
        try:
            img = imaging.load_image(img_path)
            mask = None
            if candidate_root is not None:
                try:
                    cands = mask_prior.load_candidates(
                        candidate_root, image_id, image_shape=img.data.shape[:2]
                    )
                    result = mask_prior.select_shadow_mask(img, cands, cfg.select)
                    mask = result.mask
                    best = max(
                        result.chosen_ids, key=lambda i: result.scores[i].darkness
                    )
                    score = result.scores[best]
                    row.update(
                        darkness=f"{score.darkness:.6f}",
                        ring_contrast=f"{score.ring_contrast:.6f}",
                        chroma_shift=f"{score.chroma_shift:.6f}",
                        chosen_ids=";".join(result.chosen_ids),
                        low_confidence=str(result.low_confidence).lower(),
                    )
                except mask_prior.EmptyCandidatesError:
                    mask = None
            if mask is None:
                if fallback_dir is None:
                    raise mask_prior.EmptyCandidatesError(
                        f"no candidates for {image_id} and no fallback mask directory"
                    )
                fallback = imaging.load_mask(Path(fallback_dir) / f"{image_id}.png")
                mask = imaging.dilate(fallback, cfg.select.dilation_radius)
                row.update(chosen_ids="dataset", low_confidence="false")
            imaging.save_mask(mask, mask_out)
            if cache_dir is not None:
                shutil.copyfile(mask_out, cache_dir / f"{image_id}_Ms.png")
                (cache_dir / f"{image_id}.json").write_text(json.dumps(row))
        except (DeshadowError, FileNotFoundError, OSError) as exc:
            row["error"] = str(exc)
        return row

    rows = _map_jobs(one, images, cfg.jobs)
    report = out / "prep_report.csv"
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    failures = sum(1 for r in rows if r["error"])
    print(f"prepared {len(rows) - failures}/{len(rows)} masks -> {out}")
    return 2 if failures == len(rows) else 0


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    root = args.data or cfg.paths["dataset_root"]
    if root is None:
        raise UsageError("train: no dataset root (use --data or paths.dataset_root)")
    samples = training.load_dataset(
        root,
        split=cfg.flat["train.split"],
        layout=cfg.flat["train.layout"],
        resize=cfg.train.resize,
        mask_dilation=int(cfg.flat["train.mask_dilation"]),
        candidate_root=cfg.paths["candidate_root"],
        selection=cfg.select,
    )
    training.train(cfg.train, cfg.solver, samples, out, resume_from=args.resume)
    print(f"checkpoint: {out / 'checkpoint.pt'}")
    print(f"loss trace: {out / 'loss_trace.csv'}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    weights, _ = load_checkpoint(args.checkpoint, cfg.solver)
    mask_dir = args.masks or cfg.paths["target_mask_dir"]
    if mask_dir is None:
        raise UsageError("infer: no mask directory (use --masks or paths.target_mask_dir)")
    mask_dir = Path(mask_dir)
    images = _list_images(args.inputs)
    stages_dir = out / "stages"
    if args.dump_stages:
        stages_dir.mkdir(parents=True, exist_ok=True)

    def one(img_path):
        image_id = img_path.stem
        mask_path = next(
            (
                c
                for c in (mask_dir / f"{image_id}_Ms.png", mask_dir / f"{image_id}.png")
                if c.exists()
            ),
            None,
        )
        if mask_path is None:
            raise PairingError(f"no mask for {image_id} under {mask_dir}")
        img = imaging.load_image(img_path)
        mask = imaging.load_mask(mask_path, kind=imaging.DILATED)
        final, _, traces = remove_shadows(
            img, mask, weights, cfg.solver, cfg.alpha, cfg.curve
        )
        imaging.save_image(final, out / f"{image_id}.png")
        if args.dump_stages:
            for trace in traces:
                est = trace.estimate.detach().cpu().numpy()[0].transpose(1, 2, 0)
                gain = trace.gain.detach().cpu().numpy()[0].transpose(1, 2, 0)
                imaging.save_image(
                    ImageTensor(np.clip(est, 0.0, 1.0)),
                    stages_dir / f"{image_id}_stage{trace.stage}_estimate.png",
                )
                imaging.save_image(
                    ImageTensor(normalize_gain(gain)),
                    stages_dir / f"{image_id}_stage{trace.stage}_gain.png",
                )
        return image_id

    done = _map_jobs(one, images, cfg.jobs)
    print(f"wrote {len(done)} results -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    _, aggregate = evaluation.evaluate_dir(
        args.pred,
        args.gt,
        args.mask,
        resize=cfg.eval_resize,
        out_dir=out,
        true_rmse=cfg.true_rmse,
        jobs=cfg.jobs,
    )
    print(f"metrics: {out / 'metrics.csv'}")
    print(
        f"mean rmse(all/n/s): {aggregate.rmse_all:.3f}/{aggregate.rmse_n:.3f}/"
        f"{aggregate.rmse_s:.3f}  ssim: {aggregate.ssim:.4f}  psnr: {aggregate.psnr:.2f}"
    )
    return 0


def cmd_report(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rows = []
    for metrics_path in args.metrics:
        parsed = evaluation.read_metrics_csv(metrics_path)
        mean = next((m for sid, m in parsed if sid == "__mean__"), None)
        if mean is None:
            from .errors import FormatError

            raise FormatError(f"{metrics_path}: missing __mean__ row")
        path = Path(metrics_path)
        label = path.parent.name if path.name == "metrics.csv" else path.stem
        while any(label == existing for existing, _ in rows):
            label += "+"
        rows.append((label, mean))

    report_md = evaluation.render_table(rows, label_header="Model", bold_best=True)
    (out / "report.md").write_text(report_md)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [label for label, _ in rows]
    for _, column, _ in evaluation.TABLE_COLUMNS:
        values = [getattr(m, column) for _, m in rows]
        fig, ax = plt.subplots(figsize=(1 + len(labels), 3))
        ax.bar(labels, values)
        ax.set_title(column)
        fig.tight_layout()
        fig.savefig(out / f"chart_{column}.png")
        plt.close(fig)

    if args.strips:
        parts = args.strips.split(",")
        if len(parts) != 3:
            raise UsageError("report: --strips expects input_dir,result_dir,mask_dir")
        _write_strips(out, *(Path(p) for p in parts))

    print(f"report: {out / 'report.md'}")
    return 0


def _write_strips(out, input_dir, result_dir, mask_dir) -> None:
    stems = sorted(
        {p.stem for p in input_dir.glob("*.png")}
        & {p.stem for p in result_dir.glob("*.png")}
    )
    for stem in stems:
        img = imaging.load_image(input_dir / f"{stem}.png")
        result = imaging.load_image(result_dir / f"{stem}.png")
        mask_path = next(
            (
                c
                for c in (mask_dir / f"{stem}_Ms.png", mask_dir / f"{stem}.png")
                if c.exists()
            ),
            None,
        )
        panels = [img.data, result.data]
        if mask_path is not None:
            mask = imaging.load_mask(mask_path)
            panels.append(np.repeat(mask.data[..., None], 3, axis=2))
        height = min(p.shape[0] for p in panels)
        width = min(p.shape[1] for p in panels)
        strip = np.concatenate([p[:height, :width] for p in panels], axis=1)
        imaging.save_image(ImageTensor(strip), out / f"strip_{stem}.png")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 3
    except (DeshadowError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid value: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
