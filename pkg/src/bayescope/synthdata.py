"""Synthetic age-regression cohorts with saturating maturity features.

Each "bone" channel reports a maturity value that tracks age until a
saturation age and then flattens out:

    maturity(a) = a - softplus(k * (a - sat)) / k

The wrist analog saturates at 18 and the clavicle analog at 24, so a model
that sees only the wrist channel cannot tell apart subjects older than ~19.
Optionally a per-subject biological offset ``b ~ N(0, bio_std^2)`` shifts the
age at which all channels are evaluated (shared across channels).
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

CHANNELS = ("wrist", "clavicle")
IMAGE_MAGIC = b"BSCIMG01"


@dataclass
class GeneratorConfig:
    n: int = 328
    age_low: float = 13.0
    age_high: float = 25.0
    channels: tuple = CHANNELS
    wrist_sat: float = 18.0
    clavicle_sat: float = 24.0
    k: float = 1.5
    feature_noise_std: float = 0.05
    bio_std: float = 0.0
    mode: str = "vector"
    image_size: int = 16
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.validate()

    def validate(self):
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if not self.age_low < self.age_high:
            raise ConfigError(f"age_range low ({self.age_low}) must be below high ({self.age_high})")
        for sat in (self.wrist_sat, self.clavicle_sat):
            if not self.age_low < sat < self.age_high:
                raise ConfigError(f"saturation age {sat} must lie inside the age range")
        if not self.channels or any(c not in CHANNELS for c in self.channels):
            raise ConfigError(f"channels must be a nonempty subset of {CHANNELS}")
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError("duplicate channel")
        if not self.k > 0:
            raise ConfigError("steepness k must be > 0")
        if self.feature_noise_std < 0 or self.bio_std < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.mode not in ("vector", "image"):
            raise ConfigError("mode must be 'vector' or 'image'")
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")

    def sat(self, channel: str) -> float:
        return self.wrist_sat if channel == "wrist" else self.clavicle_sat

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


def maturity(age, sat: float, k: float):
    """Soft-knee maturity curve; identity well below ``sat``, flat at ``sat`` above it."""
    if not k > 0:
        raise ConfigError("steepness k must be > 0")
    a = np.asarray(age, dtype=np.float64)
    d = a - sat
    # a - softplus(k d)/k == sat - softplus(-k d)/k; pick the branch without cancellation
    out = np.where(d <= 0, a - np.logaddexp(0.0, k * d) / k, sat - np.logaddexp(0.0, -k * d) / k)
    return float(out) if out.ndim == 0 else out


def maturity_slope(age, sat: float, k: float):
    a = np.asarray(age, dtype=np.float64)
    return 0.5 * (1.0 - np.tanh(0.5 * k * (a - sat)))


@dataclass
class SynthDataset:
    """Generated cohort. ``truth_*`` columns hold the noise-free generative state."""

    sample_id: np.ndarray
    ages: np.ndarray
    features: np.ndarray
    channels: tuple
    truth_maturity: np.ndarray
    truth_bio_age: np.ndarray
    truth_noise_std: np.ndarray
    images: np.ndarray | None = None
    split: np.ndarray | None = field(default=None)

    def __len__(self):
        return len(self.ages)

    @property
    def mode(self):
        return "image" if self.images is not None else "vector"

    def inputs(self):
        return self.images if self.images is not None else self.features

    def subset(self, idx) -> "SynthDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return SynthDataset(
            sample_id=self.sample_id[idx],
            ages=self.ages[idx],
            features=self.features[idx],
            channels=self.channels,
            truth_maturity=self.truth_maturity[idx],
            truth_bio_age=self.truth_bio_age[idx],
            truth_noise_std=self.truth_noise_std[idx],
            images=None if self.images is None else self.images[idx],
            split=None if self.split is None else self.split[idx],
        )

    def where_split(self, name: str) -> "SynthDataset":
        if self.split is None:
            raise ConfigError("dataset carries no split assignment")
        return self.subset(np.flatnonzero(self.split == name))


def _age_noise_std(bio_age, cfg: GeneratorConfig):
    """Delta-method std of age given the features, capped at the prior std of the age range."""
    prior_var = (cfg.age_high - cfg.age_low) ** 2 / 12.0
    if cfg.feature_noise_std == 0:
        feat_var = np.zeros_like(bio_age)
    else:
        info = sum(maturity_slope(bio_age, cfg.sat(c), cfg.k) ** 2 for c in cfg.channels)
        info = info / cfg.feature_noise_std ** 2
        with np.errstate(divide="ignore"):
            feat_var = np.where(info > 0, 1.0 / info, np.inf)
    return np.sqrt(np.minimum(cfg.bio_std ** 2 + feat_var, prior_var))


def render_images(features: np.ndarray, channels, cfg: GeneratorConfig, rng) -> np.ndarray:
    """Disk (wrist) and bar (clavicle) images whose sizes encode maturity."""
    size = cfg.image_size
    span = cfg.age_high - cfg.age_low
    n = len(features)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    dist = np.hypot(yy - centre, xx - centre)
    imgs = np.zeros((n, size, size, 1))
    for ci, ch in enumerate(channels):
        u = np.clip((features[:, ci] - cfg.age_low) / span, 0.0, 1.0)
        if ch == "wrist":
            radius = 1.0 + 0.3 * size * u
            imgs[..., 0] += np.clip(radius[:, None, None] - dist[None] + 0.5, 0.0, 1.0)
        else:
            length = 2.0 + (size - 4.0) * u
            row = size - 3
            cover = np.clip(length[:, None] - (xx[row][None] - 1.0), 0.0, 1.0)
            imgs[:, row, :, 0] += cover
            imgs[:, row + 1, :, 0] += cover
    if cfg.feature_noise_std > 0:
        imgs += rng.normal(0.0, cfg.feature_noise_std / span, size=imgs.shape)
    return imgs


def generate(cfg: GeneratorConfig) -> SynthDataset:
    cfg.validate()
    age_rng, bio_rng, feat_rng, img_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))
    ages = age_rng.uniform(cfg.age_low, cfg.age_high, size=cfg.n)
    bio = bio_rng.normal(0.0, cfg.bio_std, size=cfg.n) if cfg.bio_std > 0 else np.zeros(cfg.n)
    bio_age = ages + bio
    truth = np.stack([maturity(bio_age, cfg.sat(c), cfg.k) for c in cfg.channels], axis=1)
    if cfg.feature_noise_std > 0:
        features = truth + feat_rng.normal(0.0, cfg.feature_noise_std, size=truth.shape)
    else:
        features = truth.copy()
    images = render_images(features, cfg.channels, cfg, img_rng) if cfg.mode == "image" else None
    return SynthDataset(
        sample_id=np.arange(cfg.n),
        ages=ages,
        features=features,
        channels=cfg.channels,
        truth_maturity=truth,
        truth_bio_age=bio_age,
        truth_noise_std=_age_noise_std(bio_age, cfg),
        images=images,
    )


def split(dataset: SynthDataset, train_frac: float = 0.7, seed: int = 0):
    """Age-stratified split over 1-year bins.

    Within each bin the members are shuffled and ``round(train_frac * count)``
    go to train. Bins with fewer than 2 samples go entirely to train.
    Returns ``(train, test)``; ``dataset.split`` is filled in as a side effect.
    """
    if not 0.0 < train_frac < 1.0:
        raise ConfigError("train_frac must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    bins = np.floor(dataset.ages).astype(np.int64)
    is_train = np.zeros(len(dataset), dtype=bool)
    for b in np.unique(bins):
        members = np.flatnonzero(bins == b)
        if len(members) < 2:
            is_train[members] = True
            continue
        members = rng.permutation(members)
        is_train[members[:int(round(train_frac * len(members)))]] = True
    dataset.split = np.where(is_train, "train", "test")
    return dataset.subset(np.flatnonzero(is_train)), dataset.subset(np.flatnonzero(~is_train))


# ------------------------------------------------------------ serialization

def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_to_csv(ds: SynthDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["sample_id", "age"]
    header += [f"feature_{c}" for c in ds.channels]
    header += [f"truth_maturity_{c}" for c in ds.channels]
    header += ["truth_bio_age", "truth_noise_std", "split"]
    w.writerow(header)
    for i in range(len(ds)):
        row = [int(ds.sample_id[i]), _fmt(ds.ages[i])]
        row += [_fmt(v) for v in ds.features[i]]
        row += [_fmt(v) for v in ds.truth_maturity[i]]
        row += [_fmt(ds.truth_bio_age[i]), _fmt(ds.truth_noise_std[i])]
        row.append("" if ds.split is None else ds.split[i])
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, images: np.ndarray | None = None) -> SynthDataset:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigError("dataset CSV has no rows")
    channels = tuple(c for c in CHANNELS if f"feature_{c}" in rows[0])
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    splits = [r.get("split", "") for r in rows]
    ds = SynthDataset(
        sample_id=np.array([int(r["sample_id"]) for r in rows]),
        ages=col("age"),
        features=np.stack([col(f"feature_{c}") for c in channels], axis=1),
        channels=channels,
        truth_maturity=np.stack([col(f"truth_maturity_{c}") for c in channels], axis=1),
        truth_bio_age=col("truth_bio_age"),
        truth_noise_std=col("truth_noise_std"),
        images=images,
        split=np.array(splits) if all(splits) else None,
    )
    if images is not None and len(images) != len(ds):
        raise ConfigError("image container and CSV disagree on sample count")
    return ds


def write_image_container(arr: np.ndarray) -> bytes:
    """Serialize an array: magic, uint32 ndim, uint64 dims, then float64 LE row-major data."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = IMAGE_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def read_image_container(blob: bytes) -> np.ndarray:
    if blob[:8] != IMAGE_MAGIC:
        raise ConfigError("not a bayescope image container (bad magic)")
    (ndim,) = struct.unpack_from("<I", blob, 8)
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(blob) - offset != 8 * count:
        raise ConfigError("image container body length does not match its header")
    return np.frombuffer(blob, dtype="<f8", offset=offset).reshape(dims).astype(np.float64)


def inversion_estimate(features: np.ndarray, channels, cfg: GeneratorConfig, grid_step: float = 0.01):
    """Brute-force least-squares inversion: the grid age whose noise-free
    maturity vector is closest to the observed features."""
    grid = np.arange(cfg.age_low, cfg.age_high + grid_step / 2, grid_step)
    curves = np.stack([maturity(grid, cfg.sat(c), cfg.k) for c in channels], axis=1)
    d2 = ((features[:, None, :] - curves[None, :, :]) ** 2).sum(axis=2)
    return grid[np.argmin(d2, axis=1)]
