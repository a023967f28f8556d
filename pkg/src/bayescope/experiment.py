"""Config-driven pipeline: generate -> train -> predict -> evaluate, and the repro suites.

Every output is a pure function of the experiment config and input files;
floats are written with ``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, inference, synthdata
from .checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .inference import UncertaintyReport
from .models import VARIANTS, ModelSpec, build
from .synthdata import GeneratorConfig, SynthDataset
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

DATASET_CSV = "dataset.csv"
IMAGES_BIN = "images.bin"
MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.json"
TRAIN_LOG = "train_log.csv"
PREDICTIONS = "predictions.csv"
REPORT = "report.json"
SCATTER = "scatter.csv"
PROFILE = "profile.csv"

PREDICTION_COLUMNS = ["sample_id", "true_age", "mu_hat", "epistemic_var", "aleatoric_var",
                      "total_var", "passes", "aleatoric_learned"]


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_frac: float = 0.7
    passes: int = inference.DEFAULT_PASSES
    output_dir: str = "runs/experiment"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        self.generator.validate()
        self.train.validate()
        if not 0 < self.train_frac < 1:
            raise ConfigError("train_frac must lie strictly between 0 and 1")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")
        # build a throwaway spec so bad model fields fail before any file is written
        self.model_spec(x_shift=(), x_scale=(), y_shift=0.0, y_scale=1.0)

    def seeds(self) -> dict:
        """Sub-seeds derived from the composite seed."""
        state = np.random.SeedSequence(self.seed).generate_state(5)
        return dict(zip(("data", "split", "init", "train", "predict"), (int(s) for s in state)))

    def generator_config(self) -> GeneratorConfig:
        g = copy.deepcopy(self.generator)
        g.seed = self.seeds()["data"]
        return g

    def train_config(self) -> TrainConfig:
        t = copy.deepcopy(self.train)
        t.seed = self.seeds()["train"]
        return t

    def model_spec(self, **standardization) -> ModelSpec:
        d = dict(self.model)
        for k in ("seed", "input_kind", "input_dim", "x_shift", "x_scale", "y_shift", "y_scale"):
            if k in d:
                raise ConfigError(f"model.{k} is derived from the experiment and cannot be set")
        d["input_kind"] = self.generator.mode
        d["input_dim"] = len(self.generator.channels)
        d["image_size"] = self.generator.image_size
        d["seed"] = self.seeds()["init"]
        d.update(standardization)
        return ModelSpec.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "train_frac": self.train_frac,
            "passes": self.passes,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"generator", "model", "train", "train_frac", "passes", "output_dir", "seed"}
        if unknown:
            raise ConfigError(f"unknown experiment config fields: {sorted(unknown)}")
        try:
            return cls(
                generator=GeneratorConfig.from_dict(d.get("generator", {})),
                model=dict(d.get("model", {})),
                train=TrainConfig.from_dict(d.get("train", {})),
                train_frac=float(d.get("train_frac", 0.7)),
                passes=int(d.get("passes", inference.DEFAULT_PASSES)),
                output_dir=str(d.get("output_dir", "runs/experiment")),
                seed=int(d.get("seed", 0)),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(d)


# ------------------------------------------------------------------ generate

def make_dataset(cfg: ExperimentConfig) -> SynthDataset:
    ds = synthdata.generate(cfg.generator_config())
    synthdata.split(ds, cfg.train_frac, cfg.seeds()["split"])
    return ds


def write_dataset(ds: SynthDataset, out: Path) -> None:
    atomic_write(out / DATASET_CSV, synthdata.dataset_to_csv(ds))
    if ds.images is not None:
        atomic_write(out / IMAGES_BIN, synthdata.write_image_container(ds.images))


def read_dataset(path) -> SynthDataset:
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_CSV
    images = None
    img_path = path.parent / IMAGES_BIN
    if img_path.exists():
        images = synthdata.read_image_container(img_path.read_bytes())
    return synthdata.dataset_from_csv(path.read_text(), images)


def run_generate(cfg: ExperimentConfig, out) -> Path:
    cfg.validate()
    out = Path(out)
    ds = make_dataset(cfg)
    write_dataset(ds, out)
    manifest = {
        "config_sha256": cfg.hash(),
        "config": cfg.to_dict(),
        "seeds": cfg.seeds(),
        "n": len(ds),
        "n_train": int(np.sum(ds.split == "train")),
        "n_test": int(np.sum(ds.split == "test")),
        "files": [DATASET_CSV] + ([IMAGES_BIN] if ds.images is not None else []),
    }
    atomic_write(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# --------------------------------------------------------------------- train

def standardization(train_ds: SynthDataset) -> dict:
    if train_ds.images is not None:
        x_shift, x_scale = (), ()
    else:
        x_shift = tuple(train_ds.features.mean(axis=0))
        x_scale = tuple(np.maximum(train_ds.features.std(axis=0), 1e-6))
    return {"x_shift": x_shift, "x_scale": x_scale,
            "y_shift": float(train_ds.ages.mean()), "y_scale": float(max(train_ds.ages.std(), 1e-6))}


def fit(cfg: ExperimentConfig, ds: SynthDataset):
    train_ds = ds.where_split("train")
    model = build(cfg.model_spec(**standardization(train_ds)))
    return train(model, train_ds, cfg.train_config())


def run_train(cfg: ExperimentConfig, out) -> Path:
    out = Path(out)
    if (out / DATASET_CSV).exists():
        ds = read_dataset(out)
    else:
        run_generate(cfg, out)
        ds = read_dataset(out)
    model, log = fit(cfg, ds)
    atomic_write(out / TRAIN_LOG, log.to_csv())
    save_checkpoint(model, out / CHECKPOINT, cfg.train_config().seed, log.summary())
    return out


# ------------------------------------------------------------------- predict

def predictions_to_csv(sample_ids, targets, reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    for sid, y, r in zip(sample_ids, targets, reports):
        w.writerow([int(sid), repr(float(y)), repr(r.mu_hat), repr(r.epistemic_var), repr(r.aleatoric_var),
                    repr(r.total_var), r.passes, int(r.aleatoric_learned)])
    return buf.getvalue()


def predictions_from_csv(text: str):
    """Returns ``(sample_ids, targets, reports)``."""
    rows = list(csv.DictReader(io.StringIO(text)))
    ids = np.array([int(r["sample_id"]) for r in rows], dtype=np.int64)
    ys = np.array([float(r["true_age"]) for r in rows])
    reports = []
    for r in rows:
        rep = UncertaintyReport(float(r["mu_hat"]), float(r["epistemic_var"]), float(r["aleatoric_var"]),
                                int(r["passes"]), bool(int(r["aleatoric_learned"])))
        if "total_var" in r and rep.total_var != float(r["total_var"]):
            raise ConfigError(f"sample {r['sample_id']}: total_var != epistemic_var + aleatoric_var")
        reports.append(rep)
    return ids, ys, reports


def predict_dataset(model, ds: SynthDataset, passes: int, seed: int, parallel: int = 1):
    return inference.predict_batch(model, ds.inputs(), passes, seed, parallel)


def run_predict(checkpoint, dataset, out, passes: int = inference.DEFAULT_PASSES, seed: int = 0,
                parallel: int = 1, split: str | None = None) -> Path:
    model, _ = load_checkpoint(checkpoint)
    ds = read_dataset(dataset)
    if split:
        ds = ds.where_split(split)
    reports = predict_dataset(model, ds, passes, seed, parallel)
    out = Path(out)
    atomic_write(out / PREDICTIONS, predictions_to_csv(ds.sample_id, ds.ages, reports))
    return out / PREDICTIONS


# ------------------------------------------------------------------ evaluate

def evaluate_reports(reports, targets, variant: str, out: Path) -> evaluation.EvalReport:
    report = evaluation.evaluate(reports, targets, variant)
    atomic_write(out / REPORT, report.to_json())
    atomic_write(out / SCATTER, evaluation.scatter_csv(reports, targets))
    atomic_write(out / PROFILE, evaluation.profile_csv(reports, targets))
    return report


def run_evaluate(predictions, dataset, out, variant: str = "unknown") -> evaluation.EvalReport:
    ids, ys, reports = predictions_from_csv(Path(predictions).read_text())
    if dataset is not None:
        ds = read_dataset(dataset)
        truth = dict(zip(ds.sample_id.tolist(), ds.ages.tolist()))
        missing = [i for i in ids.tolist() if i not in truth]
        if missing:
            raise ConfigError(f"{len(missing)} predicted sample ids are absent from the dataset")
        ys = np.array([truth[i] for i in ids.tolist()])
    if not reports:
        raise ConfigError("predictions file has no rows")
    return evaluate_reports(reports, ys, variant, Path(out))


# --------------------------------------------------------------------- suites

SUITE_CHANNELS = {
    "both_channels": ("wrist", "clavicle"),
    "wrist_only": ("wrist",),
}

# Shared settings for the repro suites. The cohort is larger than the
# 328-subject default so the variational posterior is not dominated by the
# KL term; bio_std adds between-subject variation shared by all channels.
SUITE_DEFAULTS = {
    "generator": {"n": 3000, "bio_std": 0.8, "feature_noise_std": 0.05},
    "model": {"prior_sigma": 1.0},
    "train": {"epochs": 150, "batch_size": 64, "learning_rate": 3e-3},
}


def _deep_update(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def suite_config(suite: str, variant: str, seed: int = 0, overrides: dict | None = None) -> ExperimentConfig:
    if suite not in SUITE_CHANNELS:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {sorted(SUITE_CHANNELS)}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    d = _deep_update(SUITE_DEFAULTS, overrides or {})
    d = _deep_update(d, {"generator": {"channels": list(SUITE_CHANNELS[suite])},
                         "model": {"variant": variant}, "seed": seed})
    return ExperimentConfig.from_dict(d)


@dataclass
class VariantResult:
    variant: str
    report: evaluation.EvalReport
    saturation_ratio: float


def _run_variant(args):
    suite, variant, seed, overrides, out = args
    cfg = suite_config(suite, variant, seed, overrides)
    ds = read_dataset(out)
    vdir = out / variant
    model, log = fit(cfg, ds)
    atomic_write(vdir / TRAIN_LOG, log.to_csv())
    save_checkpoint(model, vdir / CHECKPOINT, cfg.train_config().seed, log.summary())
    test = ds.where_split("test")
    reports = predict_dataset(model, test, cfg.passes, cfg.seeds()["predict"])
    atomic_write(vdir / PREDICTIONS, predictions_to_csv(test.sample_id, test.ages, reports))
    report = evaluate_reports(reports, test.ages, variant, vdir)
    return VariantResult(variant, report, evaluation.saturation_ratio(reports, test.ages))


SUMMARY_COLUMNS = ["variant", "n_test", "mae", "mae_std", "coverage_1", "coverage_2",
                   "mean_epistemic_var", "mean_aleatoric_var", "aleatoric_ratio_20_24_vs_13_17"]


def summary_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        rep = r.report
        w.writerow([r.variant, rep.n, repr(rep.mae), repr(rep.mae_std), repr(rep.coverage[1]),
                    repr(rep.coverage[2]), repr(rep.mean_epistemic_var), repr(rep.mean_aleatoric_var),
                    repr(r.saturation_ratio)])
    return buf.getvalue()


def run_repro(suite: str, out, seed: int = 0, parallel: int = 1, overrides: dict | None = None,
              variants=VARIANTS):
    """Run all variants of a suite into ``out``; returns the list of VariantResult."""
    cfgs = [suite_config(suite, v, seed, overrides) for v in variants]
    out = Path(out)
    run_generate(cfgs[0], out)
    jobs = [(suite, v, seed, overrides, out) for v in variants]
    workers = inference.worker_cap(parallel)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_variant, jobs))
    else:
        results = [_run_variant(j) for j in jobs]
    atomic_write(out / "summary.csv", summary_csv(results))
    summary = {
        "suite": suite,
        "seed": seed,
        "config_sha256": {v: c.hash() for v, c in zip(variants, cfgs)},
        "variants": {r.variant: {**r.report.to_dict(), "aleatoric_ratio_20_24_vs_13_17": r.saturation_ratio}
                     for r in results},
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return results


# ------------------------------------------------ targeted behaviour checks

def heteroscedastic_data(n: int, seed: int):
    """``y = sin(2 pi x) + N(0, sigma(x)^2)``, ``x ~ U(0, 1)``, ``sigma(x) = 0.1 + 0.9 x``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = np.sin(2.0 * np.pi * x) + rng.standard_normal(n) * heteroscedastic_sigma(x)
    return x[:, None], y


def heteroscedastic_sigma(x):
    return 0.1 + 0.9 * np.asarray(x)


def run_heteroscedastic(variant: str, seed: int = 0, n: int = 4000, epochs: int = 100,
                        grid=np.linspace(0.05, 0.95, 19)):
    """Train on the heteroscedastic task; returns (grid, predicted sigma, true sigma)."""
    x, y = heteroscedastic_data(n, seed)
    spec = ModelSpec(variant=variant, input_dim=1, seed=seed,
                     x_shift=(float(x.mean()),), x_scale=(float(x.std()),),
                     y_shift=float(y.mean()), y_scale=float(y.std()))
    model, _ = train(build(spec), (x, y), TrainConfig(epochs=epochs, batch_size=64, learning_rate=3e-3, seed=seed))
    reports = inference.predict_batch(model, np.asarray(grid)[:, None], inference.DEFAULT_PASSES, seed)
    sigma_hat = np.sqrt([r.aleatoric_var for r in reports])
    return np.asarray(grid), sigma_hat, heteroscedastic_sigma(grid)


def run_restricted_range(variant: str = "bcnn_sigma", seed: int = 0, age_window=(15.0, 22.0),
                         overrides: dict | None = None):
    """Train on ages inside ``age_window`` only; predict the full held-out test split.

    Returns ``(test_ages, reports)``.
    """
    cfg = suite_config("both_channels", variant, seed, overrides)
    ds = make_dataset(cfg)
    train_ds = ds.where_split("train")
    keep = (train_ds.ages >= age_window[0]) & (train_ds.ages <= age_window[1])
    train_ds = train_ds.subset(np.flatnonzero(keep))
    model = build(cfg.model_spec(**standardization(train_ds)))
    model, _ = train(model, train_ds, cfg.train_config())
    test = ds.where_split("test")
    return test.ages, predict_dataset(model, test, cfg.passes, cfg.seeds()["predict"])
