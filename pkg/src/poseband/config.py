"""Run configuration: one JSON file drives every pipeline.

Unknown keys anywhere in the document are rejected, and the resolved config
is copied into every artifact directory for provenance. Scalar fields can
be overridden from the command line (seed, alpha, output_dir).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import NoiseSpec, SimConfig
from .errors import ValidationError
from .forest import ForestConfig
from .geometry import POSE_DIMS
from .methods.cjp import CjpConfig
from .methods.csp import CspConfig
from .methods.mcqr import McqrConfig

CONFIG_SCHEMA_VERSION = 1

_DIM_INDEX = {name: i for i, name in enumerate(POSE_DIMS)}


def _require_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ValidationError(
            f"unknown key(s) in {section}: {sorted(unknown)} (allowed: {sorted(allowed)})"
        )


@dataclass
class RunConfig:
    seed: int = 0
    alpha: float = 0.1
    output_dir: str = "out"
    source: str = "simulate"  # simulate | files
    sim: SimConfig = field(default_factory=SimConfig)
    pose_file: str | None = None
    feature_file: str | None = None
    fractions: tuple = (2000 / 3500, 500 / 3500, 1000 / 3500)
    min_cal: int = 20
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    methods: tuple = ("cqr", "csp", "mcqr", "cjp")
    forest: ForestConfig = field(default_factory=lambda: ForestConfig(n_trees=50, max_depth=10))
    csp: CspConfig = field(default_factory=CspConfig)
    mcqr: McqrConfig = field(default_factory=McqrConfig)
    cjp: CjpConfig = field(default_factory=CjpConfig)
    cjp_posthoc: bool = True
    csp_variant: str = "basic"  # basic | aps
    plots: bool = True
    volume_samples: int = 100_000

    def __post_init__(self):
        if self.source not in ("simulate", "files"):
            raise ValidationError(f"source must be 'simulate' or 'files', got {self.source!r}")
        if self.source == "files" and not (self.pose_file and self.feature_file):
            raise ValidationError("source 'files' requires pose_file and feature_file")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        for m in self.methods:
            if m not in ("cqr", "csp", "mcqr", "cjp"):
                raise ValidationError(f"unknown method {m!r}")
        if self.csp_variant not in ("basic", "aps"):
            raise ValidationError(f"csp_variant must be 'basic' or 'aps', got {self.csp_variant!r}")
        if self.volume_samples < 100:
            raise ValidationError("volume_samples must be >= 100")
        self.methods = tuple(self.methods)
        self.fractions = tuple(float(f) for f in self.fractions)


_TOP_KEYS = {
    "schema_version",
    "seed",
    "alpha",
    "output_dir",
    "dataset",
    "split",
    "noise",
    "methods",
    "plots",
    "volume_samples",
}
_DATASET_KEYS = {"source", "sim", "pose_file", "feature_file"}
_SIM_KEYS = {
    "n",
    "feature_dim",
    "seed",
    "duration",
    "start_pose",
    "n_harmonics",
    "base_sigma",
    "noise_gain",
    "lighting_period",
}
_SPLIT_KEYS = {"fractions", "min_cal"}
_NOISE_KEYS = {"kind", "sigma", "flip_prob", "saturation", "speckle_sigma", "seed"}
_METHODS_KEYS = {"enabled", "cqr", "csp", "mcqr", "cjp", "csp_variant", "cjp_posthoc"}
_FOREST_KEYS = {"n_trees", "max_depth", "min_leaf", "feature_fraction", "bootstrap", "seed"}
_CSP_KEYS = {
    "n_bins",
    "dims",
    "trunk_hidden",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
}
_MCQR_KEYS = {
    "latent_dim",
    "n_grid",
    "grid_radius",
    "mc_passes",
    "mc_rate",
    "point_hidden",
    "point_dropout",
    "point_epochs",
    "cvae_hidden",
    "cvae_epochs",
    "batch_size",
    "learning_rate",
    "seed",
}
_CJP_KEYS = {
    "lam",
    "alpha_lo",
    "alpha_hi",
    "coverage_target",
    "latent_dim",
    "trunk_hidden",
    "decoder_hidden",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "cal_mode",
    "intscore_mode",
}


def _tupled(d: dict, keys: tuple[str, ...]) -> dict:
    out = dict(d)
    for key in keys:
        if key in out and out[key] is not None:
            out[key] = tuple(out[key])
    return out


def run_config_from_dict(doc: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig` from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ValidationError("config root must be a JSON object")
    _require_keys("config", doc, _TOP_KEYS)
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValidationError(f"unsupported config schema_version {version!r}")
    kwargs: dict = {}
    for key in ("seed", "alpha", "output_dir", "plots", "volume_samples"):
        if key in doc:
            kwargs[key] = doc[key]

    dataset = doc.get("dataset", {})
    _require_keys("dataset", dataset, _DATASET_KEYS)
    if "source" in dataset:
        kwargs["source"] = dataset["source"]
    kwargs["pose_file"] = dataset.get("pose_file")
    kwargs["feature_file"] = dataset.get("feature_file")
    sim = dataset.get("sim", {})
    _require_keys("dataset.sim", sim, _SIM_KEYS)
    kwargs["sim"] = SimConfig(**_tupled(sim, ("start_pose",)))

    split = doc.get("split", {})
    _require_keys("split", split, _SPLIT_KEYS)
    if "fractions" in split:
        kwargs["fractions"] = tuple(split["fractions"])
    if "min_cal" in split:
        kwargs["min_cal"] = int(split["min_cal"])

    noise = doc.get("noise", {})
    _require_keys("noise", noise, _NOISE_KEYS)
    kwargs["noise"] = NoiseSpec(**_tupled(noise, ("saturation",)))

    methods = doc.get("methods", {})
    _require_keys("methods", methods, _METHODS_KEYS)
    if "enabled" in methods:
        kwargs["methods"] = tuple(methods["enabled"])
    if "csp_variant" in methods:
        kwargs["csp_variant"] = methods["csp_variant"]
    if "cjp_posthoc" in methods:
        kwargs["cjp_posthoc"] = bool(methods["cjp_posthoc"])
    cqr_section = methods.get("cqr", {})
    _require_keys("methods.cqr", cqr_section, {"forest"})
    forest = cqr_section.get("forest", {})
    _require_keys("methods.cqr.forest", forest, _FOREST_KEYS)
    base_forest = RunConfig.__dataclass_fields__["forest"].default_factory()
    kwargs["forest"] = ForestConfig(**{**_forest_defaults(base_forest), **forest})

    csp_section = methods.get("csp", {})
    _require_keys("methods.csp", csp_section, _CSP_KEYS)
    csp_section = _tupled(csp_section, ("dims", "trunk_hidden"))
    if "dims" in csp_section:
        csp_section["dims"] = tuple(
            _DIM_INDEX[d] if isinstance(d, str) else int(d) for d in csp_section["dims"]
        )
    kwargs["csp"] = CspConfig(**csp_section)

    mcqr_section = methods.get("mcqr", {})
    _require_keys("methods.mcqr", mcqr_section, _MCQR_KEYS)
    kwargs["mcqr"] = McqrConfig(**_tupled(mcqr_section, ("point_hidden", "cvae_hidden")))

    cjp_section = methods.get("cjp", {})
    _require_keys("methods.cjp", cjp_section, _CJP_KEYS)
    kwargs["cjp"] = CjpConfig(**_tupled(cjp_section, ("trunk_hidden", "decoder_hidden")))

    return RunConfig(**kwargs)


def _forest_defaults(cfg: ForestConfig) -> dict:
    return {
        "n_trees": cfg.n_trees,
        "max_depth": cfg.max_depth,
        "min_leaf": cfg.min_leaf,
        "feature_fraction": cfg.feature_fraction,
        "bootstrap": cfg.bootstrap,
        "seed": cfg.seed,
    }


def load_run_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return run_config_from_dict(doc)


def resolved_config_dict(cfg: RunConfig) -> dict:
    """Full round-trippable dictionary of the resolved configuration."""
    return {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "output_dir": cfg.output_dir,
        "plots": cfg.plots,
        "volume_samples": cfg.volume_samples,
        "dataset": {
            "source": cfg.source,
            "pose_file": cfg.pose_file,
            "feature_file": cfg.feature_file,
            "sim": {
                "n": cfg.sim.n,
                "feature_dim": cfg.sim.feature_dim,
                "seed": cfg.sim.seed,
                "duration": cfg.sim.duration,
                "start_pose": list(cfg.sim.start_pose),
                "n_harmonics": cfg.sim.n_harmonics,
                "base_sigma": cfg.sim.base_sigma,
                "noise_gain": cfg.sim.noise_gain,
                "lighting_period": cfg.sim.lighting_period,
            },
        },
        "split": {"fractions": list(cfg.fractions), "min_cal": cfg.min_cal},
        "noise": {
            "kind": cfg.noise.kind,
            "sigma": cfg.noise.sigma,
            "flip_prob": cfg.noise.flip_prob,
            "saturation": list(cfg.noise.saturation) if cfg.noise.saturation else None,
            "speckle_sigma": cfg.noise.speckle_sigma,
            "seed": cfg.noise.seed,
        },
        "methods": {
            "enabled": list(cfg.methods),
            "csp_variant": cfg.csp_variant,
            "cjp_posthoc": cfg.cjp_posthoc,
            "cqr": {"forest": _forest_defaults(cfg.forest)},
            "csp": {
                "n_bins": cfg.csp.n_bins,
                "dims": [POSE_DIMS[d] for d in cfg.csp.dims],
                "trunk_hidden": list(cfg.csp.trunk_hidden),
                "epochs": cfg.csp.epochs,
                "batch_size": cfg.csp.batch_size,
                "learning_rate": cfg.csp.learning_rate,
                "seed": cfg.csp.seed,
            },
            "mcqr": {
                "latent_dim": cfg.mcqr.latent_dim,
                "n_grid": cfg.mcqr.n_grid,
                "grid_radius": cfg.mcqr.grid_radius,
                "mc_passes": cfg.mcqr.mc_passes,
                "mc_rate": cfg.mcqr.mc_rate,
                "point_hidden": list(cfg.mcqr.point_hidden),
                "point_dropout": cfg.mcqr.point_dropout,
                "point_epochs": cfg.mcqr.point_epochs,
                "cvae_hidden": list(cfg.mcqr.cvae_hidden),
                "cvae_epochs": cfg.mcqr.cvae_epochs,
                "batch_size": cfg.mcqr.batch_size,
                "learning_rate": cfg.mcqr.learning_rate,
                "seed": cfg.mcqr.seed,
            },
            "cjp": {
                "lam": cfg.cjp.lam,
                "alpha_lo": cfg.cjp.alpha_lo,
                "alpha_hi": cfg.cjp.alpha_hi,
                "coverage_target": cfg.cjp.coverage_target,
                "latent_dim": cfg.cjp.latent_dim,
                "trunk_hidden": list(cfg.cjp.trunk_hidden),
                "decoder_hidden": list(cfg.cjp.decoder_hidden),
                "epochs": cfg.cjp.epochs,
                "batch_size": cfg.cjp.batch_size,
                "learning_rate": cfg.cjp.learning_rate,
                "seed": cfg.cjp.seed,
                "cal_mode": cfg.cjp.cal_mode,
                "intscore_mode": cfg.cjp.intscore_mode,
            },
        },
    }


def save_resolved_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(
        json.dumps(resolved_config_dict(cfg), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
