"""Per-sample error maps and pairwise MSE-reduction arithmetic."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["error_map", "reduction", "EvalReport"]


def error_map(predictions, targets) -> np.ndarray:
    """Absolute per-sample prediction errors |y - yhat|."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {targets.shape}")
    return np.abs(targets - predictions)


def reduction(model_mse_per_fold: dict, baseline_mse_per_fold: dict):
    """Per-fold MSE reduction of a model against a baseline, in percent.

    eta_k = (base_k - model_k) / base_k * 100; the average is the
    unweighted mean over folds. Fold keys must match and every baseline
    MSE must be positive.
    """
    model_keys = set(model_mse_per_fold)
    base_keys = set(baseline_mse_per_fold)
    if model_keys != base_keys:
        raise ValueError(f"fold keys differ: {sorted(model_keys)} vs {sorted(base_keys)}")
    etas = {}
    for key in model_mse_per_fold:
        base = float(baseline_mse_per_fold[key])
        if base <= 0.0:
            raise ValueError(f"baseline MSE must be positive for fold {key!r}, got {base}")
        etas[key] = (base - float(model_mse_per_fold[key])) / base * 100.0
    average = float(np.mean(list(etas.values())))
    return etas, average


@dataclass
class EvalReport:
    """Cross-validation summary: per-fold MSEs on denormalized targets."""

    fold_mse: dict  # fold label -> MSE
    average_mse: float
    n_samples: dict = field(default_factory=dict)  # fold label -> test-set size
    reduction_vs_baseline: dict | None = None
    average_reduction: float | None = None
    notes: list = field(default_factory=list)

    @classmethod
    def from_folds(cls, fold_mse: dict, n_samples: dict | None = None):
        avg = float(np.mean(list(fold_mse.values())))
        return cls(
            fold_mse=dict(fold_mse),
            average_mse=avg,
            n_samples=dict(n_samples or {}),
            notes=["average = unweighted mean of per-fold MSEs"],
        )

    def attach_baseline(self, baseline_fold_mse: dict):
        etas, avg = reduction(self.fold_mse, baseline_fold_mse)
        self.reduction_vs_baseline = etas
        self.average_reduction = avg

    def to_dict(self):
        d = {
            "fold_mse": self.fold_mse,
            "average_mse": self.average_mse,
            "n_samples": self.n_samples,
            "notes": self.notes,
        }
        if self.reduction_vs_baseline is not None:
            d["reduction_pct"] = self.reduction_vs_baseline
            d["average_reduction_pct"] = self.average_reduction
        return d
