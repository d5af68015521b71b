"""Experiment drivers behind the CLI verbs.

Each driver consumes an ExperimentConfig, runs the engine, and writes its
artifacts (PNGs, CSV tables, JSON summaries) into the configured output
directory. Sweep and fid-curve cells can run in parallel worker processes;
each cell owns its own subdirectory and aggregation happens after a join.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import pngio
from .config import ConfigError, ExperimentConfig, derive_seed
from .features import backbone_catalog, get_backbone
from .generators import GeneratorPair, make_analytic_pair, make_neural_pair, sample_latent
from .losses import masked_mse
from .metrics import (
    FeatureSample,
    embed_images,
    fid,
    fid_point,
    image_report,
    psnr,
    ssim,
    to_unit_range,
)
from .segmentation import (
    Mask,
    coverage_diagnostics,
    intersection_over_union,
    segment_analytic,
    segment_threshold,
)
from .synthesis import RunRecord, run_dds


def format_float(value: float) -> str:
    return f"{value:.12e}"


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            format_float(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def build_pair(config: ExperimentConfig) -> GeneratorPair:
    if config.generator == "analytic":
        return make_analytic_pair(config.image_size)
    return make_neural_pair(config.neural_seed, config.neural_scale,
                            config.image_size)


def build_masks(config: ExperimentConfig, pair: GeneratorPair,
                z_source, z_target) -> tuple[Mask, Mask]:
    """Source part mask and target part mask (uncomplemented)."""
    if config.mask_source == "analytic":
        if pair.source.kind != "analytic":
            raise ConfigError("mask_source: 'analytic' requires the analytic generator")
        part = config.part_selector()
        y_s = segment_analytic(z_source, part, config.image_size)
        y_t = segment_analytic(z_target, part, config.image_size)
    elif config.mask_source == "threshold":
        y_s = segment_threshold(pair.source.image(z_source.values),
                                config.mask_channel, config.mask_tau)
        y_t = segment_threshold(pair.target.image(z_target.values),
                                config.mask_channel, config.mask_tau)
    else:
        if not config.mask_png_source or not config.mask_png_target:
            raise ConfigError("mask_png_source/mask_png_target: both paths required")
        y_s = Mask(pngio.load_mask(config.mask_png_source))
        y_t = Mask(pngio.load_mask(config.mask_png_target))
    return y_s, y_t


def reference_images(config: ExperimentConfig, pair: GeneratorPair,
                     domain: str, count: int) -> list[np.ndarray]:
    generator = pair.source if domain == "source" else pair.target
    tag = f"refs_{domain}"
    return [generator.image(sample_latent(derive_seed(config.seed, tag, i),
                                          generator.latent_dim).values)
            for i in range(count)]


def run_summary(config: ExperimentConfig, record: RunRecord,
                y_s: Mask, y_t: Mask, wall_time: float,
                extra_diagnostics: dict | None = None) -> dict:
    y_t_bar = y_t.complement()
    final = record.losses[-1] if len(record.losses) else None
    diagnostics = {
        "iterations": int(len(record.losses)),
        "wall_time_seconds": wall_time,
        "mask_iou_source_target": intersection_over_union(y_s, y_t),
        **coverage_diagnostics(y_s, y_t_bar),
        "masked_mse_to_source": masked_mse(record.final_image, record.x_s, y_s),
        "masked_mse_to_target": masked_mse(record.final_image, record.x_t, y_s),
        "complement_mse_to_source": masked_mse(record.final_image, record.x_s,
                                               y_s.complement()),
        "complement_mse_to_target": masked_mse(record.final_image, record.x_t,
                                               y_s.complement()),
    }
    if extra_diagnostics:
        diagnostics.update(extra_diagnostics)
    return {
        "config": config.to_dict(),
        "final_losses": None if final is None else {
            "L_s": final[0], "L_t": final[1], "L_c": final[2], "total": final[3]},
        "metrics": {
            "xhat_vs_x_s": image_report(record.final_image, record.x_s).as_dict(),
            "xhat_vs_x_t": image_report(record.final_image, record.x_t).as_dict(),
            "xhat_vs_x_c": image_report(record.final_image, record.x_c).as_dict(),
        },
        "self_check": {"ssim_xhat_xhat": ssim(to_unit_range(record.final_image),
                                              to_unit_range(record.final_image))},
        "diagnostics": diagnostics,
    }


def write_run_artifacts(out_dir: Path, config: ExperimentConfig,
                        record: RunRecord, y_s: Mask, y_t: Mask,
                        summary: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    pngio.save_image(record.x_s, out_dir / "x_s.png")
    pngio.save_image(record.x_t, out_dir / "x_t.png")
    pngio.save_image(record.x_c, out_dir / "x_c.png")
    pngio.save_image(record.final_image, out_dir / "xhat.png")
    pngio.save_mask(y_s.grid, out_dir / "y_s.png")
    pngio.save_mask(y_t.grid, out_dir / "y_t.png")
    pngio.save_mask(y_t.complement().grid, out_dir / "y_t_bar.png")
    for iteration, (snap_s, snap_t) in sorted(record.snapshots.items()):
        pngio.save_image(snap_s, out_dir / f"snapshot_{iteration:05d}_source.png")
        pngio.save_image(snap_t, out_dir / f"snapshot_{iteration:05d}_target.png")
    rows = [[i + 1, *map(float, row)] for i, row in enumerate(record.losses)]
    write_csv(out_dir / "loss.csv", ["iter", "L_s", "L_t", "L_c", "total"], rows)
    # summary goes last so every file it references already exists
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))


def _execute_run(config: ExperimentConfig,
                 out_dir: Path | None = None) -> tuple[RunRecord, dict]:
    pair = build_pair(config)
    z_star = sample_latent(derive_seed(config.seed, "z_star"),
                           pair.shared_latent_dim)
    y_s, y_t = build_masks(config, pair, z_star, z_star)
    started = time.perf_counter()
    record = run_dds(config.dds_config(derive_seed(config.seed, "init")),
                     pair, z_star, (y_s, y_t.complement()))
    wall = time.perf_counter() - started
    summary = run_summary(config, record, y_s, y_t, wall)
    if out_dir is not None:
        write_run_artifacts(Path(out_dir), config, record, y_s, y_t, summary)
    return record, summary


def cmd_run(config: ExperimentConfig) -> dict:
    _, summary = _execute_run(config, Path(config.out))
    return summary


def _sweep_cell(args) -> list:
    config, alpha, beta, gamma, target_sample_vectors = args
    cell_config = ExperimentConfig.from_dict({
        **config.to_dict(), "alpha": alpha, "beta": beta, "gamma": gamma,
        "out": str(Path(config.out) / f"cell_a{alpha:g}_b{beta:g}_g{gamma:g}")})
    record, summary = _execute_run(cell_config, Path(cell_config.out))
    backbone = get_backbone(config.backbone)
    embedding = embed_images(backbone, [record.final_image]).vectors[0]
    fid_target = fid_point(embedding, FeatureSample(target_sample_vectors))
    final = summary["final_losses"]
    return [alpha, beta, gamma, final["L_s"], final["L_t"], final["L_c"],
            final["total"], fid_target]


def cmd_sweep(config: ExperimentConfig) -> list[list]:
    grid = [(a, b, g)
            for a in config.alpha_grid
            for b in config.beta_grid
            for g in config.gamma_grid]
    if not grid:
        raise ConfigError("alpha_grid/beta_grid/gamma_grid: sweep grid is empty")
    pair = build_pair(config)
    backbone = get_backbone(config.backbone)
    target_refs = embed_images(
        backbone, reference_images(config, pair, "target", config.ref_count))
    tasks = [(config, a, b, g, target_refs.vectors) for a, b, g in grid]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(task) for task in tasks]
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "sweep.csv",
              ["alpha", "beta", "gamma", "L_s", "L_t", "L_c", "total",
               "fid_to_target"], rows)
    return rows


def _fidcurve_member(args) -> dict[int, np.ndarray]:
    config, member = args
    pair = build_pair(config)
    z_star = sample_latent(derive_seed(config.seed, "batch_z_star", member),
                           pair.shared_latent_dim)
    y_s, y_t = build_masks(config, pair, z_star, z_star)
    dds = config.dds_config(derive_seed(config.seed, "batch_init", member))
    record = run_dds(dds, pair, z_star, (y_s, y_t.complement()))
    return record.fid_probes


def cmd_fidcurve(config: ExperimentConfig) -> list[list]:
    if config.batch_size < 2:
        raise ConfigError("batch_size: need >= 2 runs for covariance estimates")
    if config.probe_every < 1:
        raise ConfigError("probe_every: must be >= 1")
    probe_config = ExperimentConfig.from_dict(
        {**config.to_dict(), "fid_probe_every": config.probe_every})
    tasks = [(probe_config, k) for k in range(config.batch_size)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            member_probes = list(pool.map(_fidcurve_member, tasks))
    else:
        member_probes = [_fidcurve_member(task) for task in tasks]

    pair = build_pair(config)
    backbone = get_backbone(config.backbone)
    source_refs = embed_images(
        backbone, reference_images(config, pair, "source", config.ref_count))
    target_refs = embed_images(
        backbone, reference_images(config, pair, "target", config.ref_count))

    iterations = sorted(set.intersection(*(set(p) for p in member_probes)))
    rows = []
    for iteration in iterations:
        batch = embed_images(backbone, [p[iteration] for p in member_probes])
        rows.append([iteration,
                     fid(batch, source_refs), fid(batch, target_refs)])
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "fidcurve.csv",
              ["iteration", "fid_to_source", "fid_to_target"], rows)
    return rows


def cmd_unpaired(config: ExperimentConfig) -> dict:
    pair = build_pair(config)
    z_s = sample_latent(config.seed_source, pair.shared_latent_dim)
    z_t = sample_latent(config.seed_target, pair.shared_latent_dim)
    y_s, y_t = build_masks(config, pair, z_s, z_t)
    started = time.perf_counter()
    record = run_dds(config.dds_config(derive_seed(config.seed, "init")),
                     pair, z_s, (y_s, y_t.complement()), z_star_target=z_t)
    wall = time.perf_counter() - started
    summary = run_summary(config, record, y_s, y_t, wall,
                          extra_diagnostics={
                              "seed_source": config.seed_source,
                              "seed_target": config.seed_target,
                              "latent_distance": float(np.linalg.norm(
                                  z_s.values - z_t.values)),
                          })
    write_run_artifacts(Path(config.out), config, record, y_s, y_t, summary)
    return summary


def cmd_backbones(config: ExperimentConfig) -> list[list]:
    """Run one instance under every backbone, plus generator features."""
    variants = [("backbone", spec.name) for spec in backbone_catalog()]
    variants.append(("generator", config.backbone))
    rows = []
    for feature_source, backbone_name in variants:
        label = backbone_name if feature_source == "backbone" else "generator-intermediate"
        sub = ExperimentConfig.from_dict({
            **config.to_dict(),
            "feature_source": feature_source,
            "backbone": backbone_name,
            "out": str(Path(config.out) / label)})
        record, summary = _execute_run(sub, Path(sub.out))
        final = summary["final_losses"]
        report = image_report(record.final_image, record.x_t)
        rows.append([label, final["L_s"], final["L_t"], final["L_c"],
                     final["total"], report.ssim, report.psnr])
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "backbones.csv",
              ["features", "L_s", "L_t", "L_c", "total",
               "ssim_vs_target", "psnr_vs_target"], rows)
    return rows


def cmd_metrics(config: ExperimentConfig, dir_a, dir_b) -> dict:
    """FID/SSIM/PSNR between two directories of PNG images."""
    paths_a = sorted(Path(dir_a).glob("*.png"))
    paths_b = sorted(Path(dir_b).glob("*.png"))
    if len(paths_a) < 2 or len(paths_b) < 2:
        raise ConfigError("metrics: each directory needs at least 2 PNG images")
    images_a = [pngio.load_image(p) for p in paths_a]
    images_b = [pngio.load_image(p) for p in paths_b]
    backbone = get_backbone(config.backbone)
    fid_value = fid(embed_images(backbone, images_a),
                    embed_images(backbone, images_b))
    pairs = list(zip(images_a, images_b))
    ssim_values = [ssim(to_unit_range(a), to_unit_range(b)) for a, b in pairs]
    psnr_values = [psnr(to_unit_range(a), to_unit_range(b)) for a, b in pairs]
    result = {
        "fid": fid_value,
        "mean_ssim": float(np.mean(ssim_values)),
        "mean_psnr": float(np.mean(psnr_values)),
        "pairs_compared": len(pairs),
        "count_a": len(images_a),
        "count_b": len(images_b),
    }
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(result, indent=2))
    return result
