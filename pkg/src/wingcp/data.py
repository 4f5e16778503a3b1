"""Sample ingestion, feature assembly, normalization and fold splitting.

Each measured sample carries a surface location, a flight condition and
a pressure coefficient. Assembly expands every sample into five feature
groups built from a 9-point stencil:

    x1  (3,)         Ma, AoA, Re
    x2  (1, 9, 3)    3D positions of the stencil points
    x3  (1, 18, 2)   nine 2x2 metrics stacked (slot r -> rows 2r..2r+1)
    x4  (2, 18, 2)   nine Christoffel arrays, upper index as channel
    x5  (9,)         nine scalar curvatures

Slot order is identical across x2..x5. Normalization is componentwise
max-min to [0, 1], fit on training data only; constant columns map
to 0.0. Cross-validation folds are leave-one-AoA-out.
"""

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .bezier import PiecewiseManifold, SurfacePoint
from .errors import AssemblyError, ConfigError, DegenerateMetric, SampleParseError, StencilOutOfPatch
from .geometry import DEFAULT_CONVENTION, feature_bundle, feature_csv_header, feature_csv_row
from .stencil import build_stencil

__all__ = [
    "FOLD_AOAS_DEFAULT",
    "FlightCondition",
    "RawSample",
    "FeatureTensors",
    "TensorBatch",
    "NormalizationSpec",
    "AssembleResult",
    "load_samples",
    "save_samples",
    "assemble",
    "fit_normalizer",
    "fold_split",
    "train_val_split",
    "save_feature_cache",
    "load_feature_cache",
]

# Test AoAs of the standard leave-one-AoA-out protocol; samples at other
# angles stay train-only.
FOLD_AOAS_DEFAULT = (7.0, 12.0, 16.0, 18.0, 18.5, 19.0, 20.0)

SAMPLE_HEADER = ["patch_id", "u", "v", "Ma", "AoA", "Re", "span", "cp"]

GROUP_SHAPES = {"x1": (3,), "x2": (1, 9, 3), "x3": (1, 18, 2), "x4": (2, 18, 2), "x5": (9,)}


@dataclass(frozen=True)
class FlightCondition:
    ma: float
    aoa: float
    re: float

    def __post_init__(self):
        if not (math.isfinite(self.ma) and math.isfinite(self.aoa) and math.isfinite(self.re)):
            raise ValueError("non-finite flight condition")
        if self.ma <= 0 or self.re <= 0:
            raise ValueError(f"Ma and Re must be positive, got Ma={self.ma}, Re={self.re}")


@dataclass(frozen=True)
class RawSample:
    location: SurfacePoint
    condition: FlightCondition
    cp: float
    span_station: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.cp):
            raise ValueError("non-finite cp")


@dataclass
class FeatureTensors:
    """Per-sample feature groups in the documented shapes."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    x5: np.ndarray
    y: float


@dataclass
class TensorBatch:
    """Stacked feature groups for B samples: x1 (B,3) ... x5 (B,9), y (B,)."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    x5: np.ndarray
    y: np.ndarray

    @classmethod
    def stack(cls, tensors):
        if not tensors:
            raise ValueError("cannot stack an empty tensor list")
        return cls(
            x1=np.stack([t.x1 for t in tensors]),
            x2=np.stack([t.x2 for t in tensors]),
            x3=np.stack([t.x3 for t in tensors]),
            x4=np.stack([t.x4 for t in tensors]),
            x5=np.stack([t.x5 for t in tensors]),
            y=np.array([t.y for t in tensors], dtype=float),
        )

    @property
    def n(self):
        return self.x1.shape[0]

    def groups(self):
        return {"x1": self.x1, "x2": self.x2, "x3": self.x3, "x4": self.x4, "x5": self.x5}

    def subset(self, indices):
        idx = np.asarray(indices)
        return TensorBatch(
            self.x1[idx], self.x2[idx], self.x3[idx], self.x4[idx], self.x5[idx], self.y[idx]
        )

    def pointwise(self):
        """Center-slot view for single-point models.

        x2 -> (B, 3), x3 -> (B, 1, 2, 2), x4 -> (B, 2, 2, 2), x5 -> (B, 1).
        """
        return TensorBatch(
            x1=self.x1,
            x2=self.x2[:, 0, 4, :],
            x3=self.x3[:, :, 8:10, :].reshape(self.n, 1, 2, 2),
            x4=self.x4[:, :, 8:10, :].reshape(self.n, 2, 2, 2),
            x5=self.x5[:, 4:5],
            y=self.y,
        )


def _pack_sample(sample, stencil, bundles) -> FeatureTensors:
    x1 = np.array([sample.condition.ma, sample.condition.aoa, sample.condition.re])
    x2 = np.stack([b.position for b in bundles])[None, :, :]  # (1, 9, 3)
    x3 = np.concatenate([b.g for b in bundles], axis=0)[None, :, :]  # (1, 18, 2)
    x4 = np.concatenate([b.gamma for b in bundles], axis=1)  # (2, 18, 2)
    x5 = np.array([b.scalar for b in bundles])
    return FeatureTensors(x1=x1, x2=x2, x3=x3, x4=x4, x5=x5, y=sample.cp)


@dataclass
class AssembleResult:
    tensors: list  # FeatureTensors, one per kept sample, in input order
    kept: list  # indices into the input sample list
    dropped: list  # (index, reason) pairs
    stencils: list  # Stencil per kept sample
    bundles: list  # 9-tuple of RiemannianFeatures per kept sample

    def batch(self) -> TensorBatch:
        return TensorBatch.stack(self.tensors)


def assemble(
    manifold: PiecewiseManifold,
    samples,
    d: float,
    convention: str = DEFAULT_CONVENTION,
    max_drop_fraction: float = 0.10,
) -> AssembleResult:
    """Expand samples into stencil feature tensors, in input order.

    Samples whose stencil or curvature extraction fails are dropped and
    logged; assembly fails only when the drop fraction exceeds
    ``max_drop_fraction``.
    """
    tensors, kept, dropped, stencils, all_bundles = [], [], [], [], []
    for idx, sample in enumerate(samples):
        try:
            stencil = build_stencil(manifold, sample.location, d)
            bundles = [feature_bundle(manifold, p, convention) for p in stencil.points]
        except (DegenerateMetric, StencilOutOfPatch) as exc:
            dropped.append((idx, f"{type(exc).__name__}: {exc}"))
            continue
        tensors.append(_pack_sample(sample, stencil, bundles))
        kept.append(idx)
        stencils.append(stencil)
        all_bundles.append(tuple(bundles))
    n = len(samples)
    if n and len(dropped) > max_drop_fraction * n:
        raise AssemblyError(
            f"dropped {len(dropped)}/{n} samples (> {max_drop_fraction:.0%})", dropped=dropped
        )
    return AssembleResult(
        tensors=tensors, kept=kept, dropped=dropped, stencils=stencils, bundles=all_bundles
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormalizationSpec:
    """Componentwise max-min normalization fitted on training data.

    Columns with zero span ("constant columns") normalize to 0.0 and
    invert back to the stored minimum. ``fitted_on`` is a provenance tag
    serialized alongside any trained model.
    """

    mins: dict
    maxs: dict
    y_min: float
    y_max: float
    normalize_targets: bool
    fitted_on: str

    def _apply_group(self, x, key):
        lo, hi = self.mins[key], self.maxs[key]
        span = hi - lo
        out = np.zeros_like(x, dtype=float)
        nz = span != 0.0
        out[..., nz] = (x[..., nz] - lo[nz]) / span[nz]
        return out

    def _invert_group(self, x, key):
        lo, hi = self.mins[key], self.maxs[key]
        span = hi - lo
        return x * span + lo

    def apply(self, batch: TensorBatch) -> TensorBatch:
        groups = batch.groups()
        out = {}
        for key, x in groups.items():
            flat = x.reshape(batch.n, -1)
            normed = self._apply_group(flat, key)
            out[key] = normed.reshape(x.shape)
        y = batch.y
        if self.normalize_targets:
            span = self.y_max - self.y_min
            y = (y - self.y_min) / span if span != 0.0 else np.zeros_like(y)
        return TensorBatch(y=y, **out)

    def invert(self, batch: TensorBatch) -> TensorBatch:
        groups = batch.groups()
        out = {}
        for key, x in groups.items():
            flat = x.reshape(batch.n, -1)
            out[key] = self._invert_group(flat, key).reshape(x.shape)
        y = batch.y
        if self.normalize_targets:
            y = self.invert_targets(y)
        return TensorBatch(y=y, **out)

    def invert_targets(self, y: np.ndarray) -> np.ndarray:
        if not self.normalize_targets:
            return y
        return y * (self.y_max - self.y_min) + self.y_min

    def to_dict(self):
        return {
            "mins": {k: v.tolist() for k, v in self.mins.items()},
            "maxs": {k: v.tolist() for k, v in self.maxs.items()},
            "y_min": self.y_min,
            "y_max": self.y_max,
            "normalize_targets": self.normalize_targets,
            "fitted_on": self.fitted_on,
            "constant_column_policy": "zero",
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mins={k: np.asarray(v, dtype=float) for k, v in d["mins"].items()},
            maxs={k: np.asarray(v, dtype=float) for k, v in d["maxs"].items()},
            y_min=float(d["y_min"]),
            y_max=float(d["y_max"]),
            normalize_targets=bool(d["normalize_targets"]),
            fitted_on=str(d["fitted_on"]),
        )


def fit_normalizer(
    batch: TensorBatch, normalize_targets: bool = False, fitted_on: str = "train"
) -> NormalizationSpec:
    if batch.n == 0:
        raise ValueError("cannot fit a normalizer on an empty batch")
    mins, maxs = {}, {}
    for key, x in batch.groups().items():
        flat = x.reshape(batch.n, -1)
        mins[key] = flat.min(axis=0)
        maxs[key] = flat.max(axis=0)
    return NormalizationSpec(
        mins=mins,
        maxs=maxs,
        y_min=float(batch.y.min()),
        y_max=float(batch.y.max()),
        normalize_targets=normalize_targets,
        fitted_on=fitted_on,
    )


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _aoa_of(sample) -> float:
    return sample.condition.aoa


def fold_split(samples, fold_aoas) -> list:
    """Leave-one-AoA-out folds: fold k tests every sample at fold_aoas[k].

    Training indices are the complement, including samples at AoAs that
    never appear as a fold. Raises ConfigError for duplicate or absent
    fold AoAs.
    """
    fold_aoas = list(fold_aoas)
    if not fold_aoas:
        raise ConfigError("fold_aoas must be nonempty")
    for i, a in enumerate(fold_aoas):
        for b in fold_aoas[i + 1 :]:
            if math.isclose(a, b, rel_tol=0.0, abs_tol=1e-9):
                raise ConfigError(f"duplicate fold AoA {a}")
    aoas = np.array([_aoa_of(s) for s in samples])
    folds = []
    for a in fold_aoas:
        test = np.flatnonzero(np.isclose(aoas, a, rtol=0.0, atol=1e-9))
        if test.size == 0:
            raise ConfigError(f"fold AoA {a} absent from data")
        train = np.setdiff1d(np.arange(len(samples)), test)
        folds.append((train, test))
    return folds


def train_val_split(indices, samples, seed: int, val_fraction: float = 0.10):
    """Seeded train/validation split, stratified by AoA.

    Groups with a single sample stay in training; every other group
    contributes at least one validation sample.
    """
    indices = np.asarray(indices)
    rng = np.random.default_rng([int(seed), 91])
    groups: dict[float, list] = {}
    for idx in indices:
        groups.setdefault(_aoa_of(samples[int(idx)]), []).append(int(idx))
    train, val = [], []
    for aoa in sorted(groups):
        members = np.array(groups[aoa])
        rng.shuffle(members)
        if members.size < 2:
            train.extend(members.tolist())
            continue
        n_val = max(1, int(round(val_fraction * members.size)))
        val.extend(members[:n_val].tolist())
        train.extend(members[n_val:].tolist())
    return np.array(sorted(train)), np.array(sorted(val))


# ---------------------------------------------------------------------------
# Sample CSV: patch_id,u,v,Ma,AoA,Re,span,cp
# ---------------------------------------------------------------------------


def load_samples(path, known_patches=None) -> list:
    """Parse a sample CSV; errors carry the 1-based file row number."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SAMPLE_HEADER:
            raise SampleParseError(f"{path}: expected header {','.join(SAMPLE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SAMPLE_HEADER):
                raise SampleParseError(
                    f"{path}:{lineno}: expected {len(SAMPLE_HEADER)} fields, got {len(row)}"
                )
            pid = row[0].strip()
            if known_patches is not None and pid not in known_patches:
                raise SampleParseError(f"{path}:{lineno}: unknown patch_id {pid!r}")
            try:
                u, v = float(row[1]), float(row[2])
                ma, aoa, re = float(row[3]), float(row[4]), float(row[5])
                span = float(row[6]) if row[6].strip() != "" else None
                cp = float(row[7])
            except ValueError as exc:
                raise SampleParseError(f"{path}:{lineno}: {exc}") from None
            vals = [u, v, ma, aoa, re, cp] + ([span] if span is not None else [])
            if not all(math.isfinite(x) for x in vals):
                raise SampleParseError(f"{path}:{lineno}: non-finite value")
            try:
                samples.append(
                    RawSample(
                        location=SurfacePoint(pid, u, v),
                        condition=FlightCondition(ma=ma, aoa=aoa, re=re),
                        cp=cp,
                        span_station=span,
                    )
                )
            except ValueError as exc:
                raise SampleParseError(f"{path}:{lineno}: {exc}") from None
    return samples


def save_samples(path, samples):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_HEADER)
        for s in samples:
            writer.writerow(
                [
                    s.location.patch_id,
                    format(s.location.u, ".17g"),
                    format(s.location.v, ".17g"),
                    format(s.condition.ma, ".17g"),
                    format(s.condition.aoa, ".17g"),
                    format(s.condition.re, ".17g"),
                    "" if s.span_station is None else format(s.span_station, ".17g"),
                    format(s.cp, ".17g"),
                ]
            )


# ---------------------------------------------------------------------------
# Feature cache: one CSV per group + meta.csv + manifest.json
# ---------------------------------------------------------------------------

_META_HEADER = ["row", "patch_id", "u", "v", "x", "y", "z", "Ma", "AoA", "Re", "span", "cp"]


def _group_columns(key) -> list:
    shape = GROUP_SHAPES[key]
    idx = np.indices(shape).reshape(len(shape), -1).T
    return [key + "_" + "_".join(str(i) for i in row) for row in idx]


def save_feature_cache(outdir, result: AssembleResult, samples, manifest: dict):
    """Write raw (un-normalized) feature CSVs, sample metadata and manifest."""
    os.makedirs(outdir, exist_ok=True)
    batch = result.batch()
    for key, x in batch.groups().items():
        flat = x.reshape(batch.n, -1)
        with open(os.path.join(outdir, f"{key}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_group_columns(key))
            for row in flat:
                writer.writerow([format(val, ".17g") for val in row])
    with open(os.path.join(outdir, "y.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cp"])
        for val in batch.y:
            writer.writerow([format(val, ".17g")])
    with open(os.path.join(outdir, "meta.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_META_HEADER)
        for out_row, src_idx in enumerate(result.kept):
            s = samples[src_idx]
            pos = result.tensors[out_row].x2[0, 4, :]
            writer.writerow(
                [
                    out_row,
                    s.location.patch_id,
                    format(s.location.u, ".17g"),
                    format(s.location.v, ".17g"),
                    format(pos[0], ".17g"),
                    format(pos[1], ".17g"),
                    format(pos[2], ".17g"),
                    format(s.condition.ma, ".17g"),
                    format(s.condition.aoa, ".17g"),
                    format(s.condition.re, ".17g"),
                    "" if s.span_station is None else format(s.span_station, ".17g"),
                    format(s.cp, ".17g"),
                ]
            )
    with open(os.path.join(outdir, "features_points.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_csv_header(stencil_slot=True))
        for bundles in result.bundles:
            for slot, bundle in enumerate(bundles):
                writer.writerow(feature_csv_row(bundle, stencil_slot=slot))
    manifest = dict(manifest)
    manifest["shapes"] = {k: list(v) for k, v in GROUP_SHAPES.items()}
    manifest["n_samples"] = batch.n
    manifest["dropped"] = [{"row": i, "reason": r} for i, r in result.dropped]
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_feature_cache(cachedir):
    """Read a feature cache back into (TensorBatch, meta rows, manifest)."""
    with open(os.path.join(cachedir, "manifest.json")) as fh:
        manifest = json.load(fh)
    arrays = {}
    n = None
    for key in GROUP_SHAPES:
        path = os.path.join(cachedir, f"{key}.csv")
        flat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
        if n is None:
            n = flat.shape[0]
        arrays[key] = flat.reshape((n,) + GROUP_SHAPES[key])
    y = np.loadtxt(os.path.join(cachedir, "y.csv"), delimiter=",", skiprows=1, ndmin=1, dtype=float)
    meta = []
    with open(os.path.join(cachedir, "meta.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            meta.append(row)
    batch = TensorBatch(y=np.asarray(y, dtype=float).reshape(-1), **arrays)
    if batch.n != len(meta):
        raise SampleParseError(f"{cachedir}: meta.csv rows ({len(meta)}) != tensor rows ({batch.n})")
    return batch, meta, manifest
