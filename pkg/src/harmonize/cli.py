"""Command-line entry point: validate a config, run the ablation, write artifacts.

Outputs (relative to the output directory)::

    images/<variant>.pgm            final image, min-max scaled to 8 bits
    masks/<variant>/step_NNN.pgm    subject mask applied at executed step NNN
    heatmaps/<variant>.pgm          subject cross-attention averaged over steps
    metrics.csv                     masked / unmasked similarity, mask coverage
    manifest.json                   config echo, hashes, image ranges, warnings
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, token_id
from .denoiser import ToyDenoiser
from .embedding import encode_text, encode_visual
from .exceptions import HarmonizeWarning
from .masking import aggregate_subject_saliency
from .metrics import ablation_report, latent_to_image, unit_range
from .pgm import encode_pgm, quantize
from .sampler import VARIANTS, NoiseSchedule, SwapWindow, run_ablation, subject_slots

__all__ = ["build_parser", "execute", "main"]

OUT_ENV = "HARMONIZE_OUT"


def build_parser():
    p = argparse.ArgumentParser(
        prog="harmonize",
        description="Orthogonal visual embedding + masked self-attention swap on a toy latent diffusion model.",
    )
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help=f"output directory (the {OUT_ENV} env var takes precedence)")
    p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    p.add_argument("--variant", choices=[k for k, _ in VARIANTS] + ["all"],
                   help="run a single ablation variant (default: config value, normally all)")
    p.add_argument("--steps", type=int, help="override scheduler.steps")
    p.add_argument("--validate-only", action="store_true",
                   help="check the config and exit without computing")
    return p


def _saliency_heatmap(records, slots, grid):
    total = np.zeros(grid)
    for step_records in records:
        total += aggregate_subject_saliency(step_records, slots, *grid)
    return total / len(records)


def execute(cfg, image):
    """Run the configured variants; returns ``(files, manifest)`` with files as bytes."""
    m = cfg.model
    model = ToyDenoiser(m.height, m.width, m.h, m.h_c, m.d, m.encoder_blocks,
                        m.middle_blocks, m.decoder_blocks, m.ff_mult, seed=cfg.seed)
    text = encode_text([token_id(t, cfg.vocab_size) for t in cfg.prompt],
                       [t.role for t in cfg.prompt], cfg.seed, m.h_c, cfg.vocab_size)
    visual = encode_visual(image, cfg.visual_tokens, cfg.seed, m.h_c)
    schedule = NoiseSchedule(cfg.scheduler.steps, cfg.scheduler.beta_start, cfg.scheduler.beta_end)
    window = SwapWindow(cfg.swap.start_step, tuple(cfg.swap.layers))
    variants = None if cfg.variant == "all" else [cfg.variant]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HarmonizeWarning)
        results = run_ablation(
            model, text, visual, schedule, window, cfg.seed,
            variants=variants,
            excluded_roles=cfg.orchestration.excluded_roles,
            eps_drop=cfg.orchestration.eps_drop,
            mask_roles=cfg.mask.roles,
            threshold=cfg.mask.threshold,
            shared_noise=cfg.shared_noise,
            orchestration_enabled=cfg.orchestration.enabled,
            swap_enabled=cfg.swap.enabled,
        )
        ref_mask = None if cfg.reference_mask is None else np.array(cfg.reference_mask)
        report = ablation_report(results, image, ref_mask, require_all=cfg.variant == "all")

    files, ranges = {}, {}
    for res in results:
        name = f"images/{res.key}.pgm"
        unit, lo, hi = unit_range(latent_to_image(res.z0))
        files[name] = encode_pgm(quantize(unit))
        ranges[name] = {"min": lo, "max": hi}
        for k, mask in sorted(res.masks.items()):
            files[f"masks/{res.key}/step_{k:03d}.pgm"] = encode_pgm(mask.as_grid() * 255)
        slots = subject_slots(res.context, cfg.mask.roles)
        heat = unit_range(_saliency_heatmap(res.result.records, slots, model.grid))[0]
        files[f"heatmaps/{res.key}.pgm"] = encode_pgm(quantize(heat))
    files["metrics.csv"] = report.to_csv().encode("utf-8")

    manifest = {
        "tool": "harmonize",
        "version": __version__,
        "config": cfg.echo(),
        "variants": [{"key": r.key, "label": r.label} for r in results],
        "images": ranges,
        "files": [
            {"name": name, "sha256": hashlib.sha256(data).hexdigest()}
            for name, data in sorted(files.items())
        ],
        "warnings": [
            {"category": w.category.__name__, "message": str(w.message)} for w in caught
            if issubclass(w.category, HarmonizeWarning)
        ],
    }
    return files, manifest


def manifest_bytes(manifest):
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_outputs(out_dir, files, manifest):
    """Stage everything next to ``out_dir`` and move into place only once complete.

    If moving fails part way, files already moved are removed again (and
    ``out_dir`` too when this call created it).
    """
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    created = not out_dir.exists()
    staging = Path(tempfile.mkdtemp(prefix=".harmonize-", dir=out_dir.parent))
    moved = []
    try:
        payload = dict(files)
        payload["manifest.json"] = manifest_bytes(manifest)
        for name, data in payload.items():
            target = staging / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in payload:
            dest = out_dir / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(staging / name, dest)
            moved.append(dest)
    except BaseException:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        else:
            for path in moved:
                path.unlink(missing_ok=True)
        raise
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["scheduler.steps"] = args.steps
    if args.variant is not None:
        overrides["variant"] = args.variant

    try:
        cfg, image = load_config(args.config, overrides)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for v in exc.violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return 2

    if args.validate_only:
        print("config OK")
        return 0

    out_dir = os.environ.get(OUT_ENV) or args.out or cfg.output_dir
    try:
        files, manifest = execute(cfg, image)
        write_outputs(out_dir, files, manifest)
    except Exception as exc:  # noqa: BLE001 - any compute failure maps to exit 1
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(manifest['files']) + 1} files to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
