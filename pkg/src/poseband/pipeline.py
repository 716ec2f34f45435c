"""End-to-end pipelines behind the CLI: simulate, train, calibrate, evaluate.

Artifacts land under the run's output directory::

    resolved_config.json
    dataset/poses.txt, features.csv, split.json
    models/<method>.ckpt
    reports/<method>_report.json      (deterministic per config+seed)
    reports/<method>_timings.json     (wall-clock medians; not deterministic)
    reports/cjp_training_log.csv
    plots/<method>_band_*.svg, <method>_topdown.svg
    comparison.csv / comparison.json / comparison.txt

Simulated datasets are regenerated from the config on every step (bit-exact
by seeding), so `evaluate` can run without `simulate`'s file exports; the
exported pose/feature files exist for interop and inspection.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, save_resolved_config
from .data import (
    DataSplit,
    PoseDataset,
    apply_noise,
    save_feature_csv,
    save_pose_file,
    split_dataset,
)
from .errors import ValidationError
from .geometry import POSE_DIMS
from .methods import cjp as m_cjp
from .methods import cqr as m_cqr
from .methods import csp as m_csp
from .methods import mcqr as m_mcqr
from .report import (
    ComparisonTable,
    MethodReport,
    band_coverage,
    compare_methods,
    coverage_metrics,
    interval_score_metric,
    volume_estimate,
)
from .rng import substream_seeds
from .svg import emit_plots, topdown_svg


def _timed_median3(fn):
    """Run ``fn`` three times (deterministic, so results agree) and return
    (last_result, median_wall_clock)."""
    times = []
    result = None
    for _ in range(3):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, float(np.median(times))


def load_dataset(cfg: RunConfig) -> tuple[PoseDataset, DataSplit]:
    """Materialize the dataset (simulated or from files), noise applied."""
    if cfg.source == "simulate":
        dataset = PoseDataset.simulate(cfg.sim)
    else:
        dataset = PoseDataset.from_files(cfg.pose_file, cfg.feature_file)
    if cfg.noise.kind != "none":
        dataset = dataset.with_features(apply_noise(dataset.features, cfg.noise))
    split = split_dataset(dataset.n, cfg.fractions, cfg.seed, min_cal=cfg.min_cal)
    return dataset, split


def _run_dirs(cfg: RunConfig) -> dict[str, Path]:
    root = Path(cfg.output_dir)
    dirs = {
        "root": root,
        "dataset": root / "dataset",
        "models": root / "models",
        "reports": root / "reports",
        "plots": root / "plots",
    }
    for p in dirs.values():
        p.mkdir(parents=True, exist_ok=True)
    save_resolved_config(cfg, root / "resolved_config.json")
    return dirs


def run_simulate(cfg: RunConfig) -> dict[str, Path]:
    """Write pose file, feature CSV, and split manifest."""
    dirs = _run_dirs(cfg)
    dataset, split = load_dataset(cfg)
    save_pose_file(dataset.trajectory(), dirs["dataset"] / "poses.txt")
    save_feature_csv(dataset.features, dirs["dataset"] / "features.csv")
    manifest = {
        "n": dataset.n,
        "train": split.train.tolist(),
        "cal": split.cal.tolist(),
        "test": split.test.tolist(),
    }
    (dirs["dataset"] / "split.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return dirs


def _model_path(dirs, method: str) -> Path:
    return dirs["models"] / f"{method}.ckpt"


def train_method(cfg: RunConfig, method: str, dataset, split):
    """Fit (and, where the method couples them, calibrate); returns model."""
    seeds = {m: int(s) for m, s in zip(("cqr", "csp", "mcqr", "cjp"), substream_seeds(cfg.seed, 4, "methods"))}
    if method == "cqr":
        from dataclasses import replace

        forest_cfg = replace(cfg.forest, seed=seeds["cqr"])
        return m_cqr.cqr_fit(dataset, split, cfg.alpha, forest_cfg)
    if method == "csp":
        from dataclasses import replace

        csp_cfg = replace(cfg.csp, seed=seeds["csp"])
        disc = m_csp.build_discretization(
            dataset.labels[split.train][:, list(csp_cfg.dims)], csp_cfg.n_bins
        )
        return m_csp.csp_train(dataset, split, disc, csp_cfg)
    if method == "mcqr":
        from dataclasses import replace

        mcqr_cfg = replace(cfg.mcqr, seed=seeds["mcqr"])
        return m_mcqr.mcqr_fit(dataset, split, cfg.alpha, mcqr_cfg)
    if method == "cjp":
        from dataclasses import replace

        cjp_cfg = replace(cfg.cjp, seed=seeds["cjp"])
        model, log = m_cjp.cjp_train(dataset, split, cjp_cfg)
        model.training_log = log
        return model
    raise ValidationError(f"unknown method {method!r}")


def calibrate_method(cfg: RunConfig, method: str, model, dataset, split):
    X_cal = dataset.features[split.cal]
    Y_cal = dataset.labels[split.cal]
    if method == "cqr":
        return m_cqr.cqr_calibrate(model, X_cal, Y_cal, cfg.alpha)
    if method == "csp":
        return m_csp.csp_calibrate(model, X_cal, Y_cal, cfg.alpha)
    if method == "mcqr":
        model.record = m_mcqr.mcqr_calibrate(
            model.cvae, model.grid, X_cal, Y_cal, cfg.alpha
        )
        model.alpha = cfg.alpha
        return model
    if method == "cjp":
        if cfg.cjp_posthoc:
            return m_cjp.cjp_posthoc_calibrate(model, X_cal, Y_cal, cfg.alpha)
        return model
    raise ValidationError(f"unknown method {method!r}")


def save_model(method: str, model, path) -> None:
    to_arrays = {
        "cqr": m_cqr.cqr_to_arrays,
        "csp": m_csp.csp_to_arrays,
        "mcqr": m_mcqr.mcqr_to_arrays,
        "cjp": m_cjp.cjp_to_arrays,
    }[method]
    meta, arrays = to_arrays(model)
    save_checkpoint(path, meta, arrays)


def load_model(method: str, path):
    from_arrays = {
        "cqr": m_cqr.cqr_from_arrays,
        "csp": m_csp.csp_from_arrays,
        "mcqr": m_mcqr.mcqr_from_arrays,
        "cjp": m_cjp.cjp_from_arrays,
    }[method]
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != method:
        raise ValidationError(f"{path} holds a {meta.get('kind')!r} model, not {method!r}")
    return from_arrays(meta, arrays)


def evaluate_method(cfg: RunConfig, method: str, model, dataset, split) -> tuple[MethodReport, dict]:
    """Evaluate one calibrated model on the test split."""
    X = dataset.features[split.test]
    Y = dataset.labels[split.test]
    vol_seed = cfg.seed + 77
    extra: dict = {}
    if method == "cqr":
        band, predict_time = _timed_median3(lambda: m_cqr.cqr_predict(model, X))
        report = _band_report("cqr", cfg, band, Y)
        extra["band"] = band
        if not np.any(band.unbounded):
            region = m_cqr.box_region(band, 0)
            vol, se = volume_estimate(region, cfg.volume_samples, vol_seed)
            report.region_volume, report.region_volume_stderr = vol, se
            report.region_dim = region.dim
            extra["regions"] = [m_cqr.box_region(band, i) for i in range(min(8, X.shape[0]))]
    elif method == "csp":
        predict = (
            m_csp.csp_predict_mask if cfg.csp_variant == "basic" else m_csp.csp_predict_mask_aps
        )
        (masks, fallback), predict_time = _timed_median3(lambda: predict(model, X))
        per_dim = m_csp.class_coverage(model, masks, Y)
        rows = np.arange(Y.shape[0])
        true_bins = model.disc.bin_index(Y[:, list(model.dims)])
        joint_mask = np.all(
            np.stack([m[rows, true_bins[:, j]] for j, m in enumerate(masks)], axis=1),
            axis=1,
        )
        dims = model.dim_names
        widths = {}
        for j, name in enumerate(dims):
            edges = model.disc.edges[j]
            bin_w = edges[1:] - edges[:-1]
            widths[name] = float((masks[j] * bin_w).sum(axis=1).mean())
        sets0 = m_csp._mask_to_set(masks, fallback, 0)
        region = m_csp.set_to_region(sets0, model.disc)
        vol, se = volume_estimate(region, cfg.volume_samples, vol_seed)
        report = MethodReport(
            method="csp",
            alpha=cfg.alpha,
            n_test=Y.shape[0],
            dims=dims,
            per_dim_coverage={name: float(per_dim[j]) for j, name in enumerate(dims)},
            joint_coverage=float(joint_mask.mean()),
            per_dim_avg_width=widths,
            mean_width=float(np.mean(list(widths.values()))),
            mean_interval_score=None,
            region_volume=vol,
            region_volume_stderr=se,
            region_dim=region.dim,
            unbounded=model.unbounded,
            fallback_rate=float(fallback.any(axis=1).mean()),
        )
        extra["regions"] = [
            m_csp.set_to_region(m_csp._mask_to_set(masks, fallback, i), model.disc)
            for i in range(min(8, X.shape[0]))
        ]
    elif method == "mcqr":
        if model.record is None:
            raise ValidationError("mcqr model is not calibrated")
        contains, predict_time = _timed_median3(lambda: m_mcqr.mcqr_contains(model, X, Y))
        extents = m_mcqr.mcqr_extents(model, X)
        centers = m_mcqr.decode_grid(model.cvae, model.grid, X)
        lo = centers.min(axis=1) - model.q_hat
        hi = centers.max(axis=1) + model.q_hat
        inside = (Y >= lo) & (Y <= hi)
        per_dim, _ = coverage_metrics(inside)
        _, joint = coverage_metrics(inside, joint_inside=contains)
        region = m_mcqr.mcqr_region(model.cvae, model.grid, X[0], model.q_hat)
        vol, se = volume_estimate(region, cfg.volume_samples, vol_seed)
        report = MethodReport(
            method="mcqr",
            alpha=cfg.alpha,
            n_test=Y.shape[0],
            dims=POSE_DIMS,
            per_dim_coverage={name: float(per_dim[d]) for d, name in enumerate(POSE_DIMS)},
            joint_coverage=joint,
            per_dim_avg_width={
                name: float(extents[:, d].mean()) for d, name in enumerate(POSE_DIMS)
            },
            mean_width=float(extents.mean()),
            mean_interval_score=float(
                interval_score_metric(Y, lo, hi, cfg.alpha)
            ),
            region_volume=vol,
            region_volume_stderr=se,
            region_dim=region.dim,
            unbounded=model.record.unbounded,
        )
        extra["regions"] = [
            m_mcqr.mcqr_region(model.cvae, model.grid, X[i], model.q_hat)
            for i in range(min(4, X.shape[0]))
        ]
    elif method == "cjp":
        (y_hat, band), predict_time = _timed_median3(lambda: m_cjp.cjp_predict(model, X))
        report = _band_report("cjp", cfg, band, Y)
        extra["band"] = band
        if not np.any(band.unbounded):
            region = m_cqr.box_region(band, 0)
            vol, se = volume_estimate(region, cfg.volume_samples, vol_seed)
            report.region_volume, report.region_volume_stderr = vol, se
            report.region_dim = region.dim
            extra["regions"] = [m_cqr.box_region(band, i) for i in range(min(8, X.shape[0]))]
    else:
        raise ValidationError(f"unknown method {method!r}")
    report.timings = {"predict": predict_time}
    return report, extra


def _band_report(method: str, cfg: RunConfig, band, Y) -> MethodReport:
    per_dim, joint = band_coverage(band, Y)
    widths = band.width
    finite = np.all(np.isfinite(widths))
    score = None
    if finite:
        score = float(interval_score_metric(Y, band.lower, band.upper, cfg.alpha))
    return MethodReport(
        method=method,
        alpha=cfg.alpha,
        n_test=Y.shape[0],
        dims=POSE_DIMS,
        per_dim_coverage={name: float(per_dim[d]) for d, name in enumerate(POSE_DIMS)},
        joint_coverage=joint,
        per_dim_avg_width={
            name: float(np.atleast_2d(widths)[:, d].mean()) for d, name in enumerate(POSE_DIMS)
        },
        mean_width=float(np.mean(widths)),
        mean_interval_score=score,
        region_volume=float("inf") if not finite else 0.0,
        region_volume_stderr=0.0,
        region_dim=6,
        unbounded=bool(np.any(band.unbounded)),
    )


def run_train(cfg: RunConfig, methods=None) -> dict:
    dirs = _run_dirs(cfg)
    dataset, split = load_dataset(cfg)
    models = {}
    timings = {}
    for method in methods or cfg.methods:
        model, fit_time = _timed_median3(
            lambda m=method: train_method(cfg, m, dataset, split)
        )
        models[method] = model
        timings[method] = {"fit": fit_time}
        save_model(method, model, _model_path(dirs, method))
        if method == "cjp" and getattr(model, "training_log", None):
            m_cjp.write_training_log(
                model.training_log, dirs["reports"] / "cjp_training_log.csv"
            )
    return {"dirs": dirs, "models": models, "timings": timings, "dataset": dataset, "split": split}


def run_calibrate(cfg: RunConfig, methods=None) -> dict:
    dirs = _run_dirs(cfg)
    dataset, split = load_dataset(cfg)
    out = {}
    for method in methods or cfg.methods:
        model = load_model(method, _model_path(dirs, method))
        model, cal_time = _timed_median3(
            lambda m=method, mo=model: calibrate_method(cfg, m, mo, dataset, split)
        )
        save_model(method, model, _model_path(dirs, method))
        out[method] = {"calibrate": cal_time}
    return out


def run_evaluate(cfg: RunConfig, methods=None, models=None, timings=None) -> dict[str, MethodReport]:
    dirs = _run_dirs(cfg)
    dataset, split = load_dataset(cfg)
    reports = {}
    for method in methods or cfg.methods:
        if models and method in models:
            model = models[method]
        else:
            model = load_model(method, _model_path(dirs, method))
        report, extra = evaluate_method(cfg, method, model, dataset, split)
        if timings and method in timings:
            report.timings.update(timings[method])
        report.save(dirs["reports"] / f"{method}_report.json")
        (dirs["reports"] / f"{method}_timings.json").write_text(
            json.dumps(report.timings, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        if cfg.plots:
            # split.test is sorted, so band rows are already in time order
            from .geometry import Trajectory

            sub = Trajectory(
                timestamps=dataset.timestamps[split.test],
                poses=dataset.labels[split.test],
            )
            emit_plots(
                sub, extra.get("band"), extra.get("regions", ()), dirs["plots"], prefix=f"{method}_"
            )
        reports[method] = report
    return reports


def run_compare(cfg: RunConfig, methods=None) -> ComparisonTable:
    """Full pipeline for every method plus the aligned comparison table."""
    methods = tuple(methods or cfg.methods)
    if len(methods) < 2:
        raise ValidationError("compare needs at least two methods")
    dirs = _run_dirs(cfg)
    if cfg.source == "simulate":
        run_simulate(cfg)
    dataset, split = load_dataset(cfg)
    models = {}
    timings = {}
    for method in methods:
        model, fit_time = _timed_median3(
            lambda m=method: train_method(cfg, m, dataset, split)
        )
        model, cal_time = _timed_median3(
            lambda m=method, mo=model: calibrate_method(cfg, m, mo, dataset, split)
        )
        save_model(method, model, _model_path(dirs, method))
        if method == "cjp" and getattr(model, "training_log", None):
            m_cjp.write_training_log(
                model.training_log, dirs["reports"] / "cjp_training_log.csv"
            )
        models[method] = model
        timings[method] = {"fit": fit_time, "calibrate": cal_time}
    reports = run_evaluate(cfg, methods, models=models, timings=timings)
    table = compare_methods([reports[m] for m in methods])
    table.to_csv(dirs["root"] / "comparison.csv")
    table.to_json(dirs["root"] / "comparison.json")
    (dirs["root"] / "comparison.txt").write_text(table.render(), encoding="utf-8")
    return table
