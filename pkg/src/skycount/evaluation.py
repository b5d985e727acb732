"""Count metrics, repeated trials and the ablation harness."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ContractError
from .model import ModelConfig, ModelParams, Variant, build_model, predict_count
from .tensor import Tensor, make_rng
from .transforms import Sample, pad_to_multiple


@dataclass
class EvalReport:
    predictions: List[float]
    truths: List[float]
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.predictions) != len(self.truths):
            raise ContractError("predictions and truths differ in length")
        if not self.predictions:
            raise ContractError("an evaluation report needs at least one image")

    @property
    def n(self) -> int:
        return len(self.truths)

    @property
    def abs_errors(self) -> np.ndarray:
        return np.abs(np.asarray(self.predictions, float) - np.asarray(self.truths, float))

    @property
    def mae(self) -> float:
        return float(self.abs_errors.mean())

    @property
    def rmse(self) -> float:
        e = self.abs_errors
        top = float(e.max())
        if top == 0.0 or not math.isfinite(top):
            return top
        return top * float(math.sqrt(np.mean((e / top) ** 2)))  # scaled to avoid underflow

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae,
            "rmse": self.rmse,
            "images": [
                {"name": name, "predicted": p, "truth": t}
                for name, p, t in zip(self.names or [""] * self.n, self.predictions, self.truths)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        return f"{'images':>8} {'MAE':>10} {'RMSE':>10}\n{self.n:>8} {self.mae:>10.2f} {self.rmse:>10.2f}"


def report_from_counts(predictions, truths) -> EvalReport:
    return EvalReport([float(p) for p in predictions], [float(t) for t in truths])


def evaluate(params: ModelParams, config: ModelConfig, samples: Sequence[Sample]) -> EvalReport:
    """Predicted count (raw density sum) against annotation count, per image."""
    if not samples:
        raise ContractError("cannot evaluate on an empty sample set")
    preds, truths, names = [], [], []
    for s in samples:
        padded = pad_to_multiple(s)
        image = Tensor(padded.image.transpose(2, 0, 1)[None])
        preds.append(predict_count(params, config, image).raw)
        truths.append(float(s.count))
        names.append(s.id)
    return EvalReport(preds, truths, names)


def format_pm(mean: float, std: float, mean_digits: int = 2, std_digits: int = 1) -> str:
    """``mean±std`` in the compact two-decimal / one-decimal style, e.g. 7.59±0.8."""
    return f"{mean:.{mean_digits}f}±{std:.{std_digits}f}"


@dataclass
class TrialSummary:
    reports: List[EvalReport]

    def _stat(self, attr):
        vals = np.array([getattr(r, attr) for r in self.reports])
        return float(vals.mean()), float(vals.std(ddof=1))

    @property
    def mae(self):
        return self._stat("mae")

    @property
    def rmse(self):
        return self._stat("rmse")

    def __str__(self) -> str:
        return f"MAE {format_pm(*self.mae)}  RMSE {format_pm(*self.rmse)}  ({len(self.reports)} trials)"


def mean_and_sample_std(values: Sequence[float]):
    vals = np.asarray(values, dtype=float)
    if vals.size < 2:
        raise ContractError("a sample standard deviation needs at least 2 values")
    return float(vals.mean()), float(vals.std(ddof=1))


def multi_trial(run_trial: Callable[[int], EvalReport], k: int = 5,
                seeds: Optional[Sequence[int]] = None, base_seed: int = 0) -> TrialSummary:
    """Run ``run_trial(seed)`` for ``k`` seeds and summarise with sample std."""
    seeds = list(seeds) if seeds is not None else [base_seed + i for i in range(k)]
    if len(seeds) < 2:
        raise ContractError("multi_trial needs k >= 2")
    return TrialSummary([run_trial(s) for s in seeds])


# -- ablation ------------------------------------------------------------------

ABLATION_LABELS = {
    Variant.BASELINE: "Baseline",
    Variant.BASELINE_ATT: "Baseline+Att",
    Variant.BASELINE_ATT_SPM: "Baseline+Att+SPM",
    Variant.FULL: "Baseline+Att+SPM+DCM",
}


@dataclass
class AblationRow:
    variant: Variant
    report: EvalReport
    first_loss: float
    final_loss: float

    @property
    def label(self) -> str:
        return ABLATION_LABELS[self.variant]


@dataclass
class AblationReport:
    rows: List[AblationRow]

    def table(self) -> str:
        width = max(len(r.label) for r in self.rows)
        lines = [f"{'Method':<{width}}  {'MAE':>8}  {'RMSE':>8}",
                 f"{'-' * width}  {'-' * 8}  {'-' * 8}"]
        for r in self.rows:
            lines.append(f"{r.label:<{width}}  {r.report.mae:>8.2f}  {r.report.rmse:>8.2f}")
        return "\n".join(lines)


def run_ablation(base_config: ModelConfig, train_config, train_samples: Sequence[Sample],
                 test_samples: Sequence[Sample], sigma: float,
                 variants: Sequence[Variant] = tuple(ABLATION_LABELS)) -> AblationReport:
    """Train and evaluate each variant from the same seed."""
    from .train import prepare_sample, train

    prepared = [prepare_sample(s, sigma) for s in train_samples]
    rows = []
    for variant in variants:
        cfg = base_config.with_variant(variant)
        params = build_model(cfg, make_rng(train_config.seed))
        result = train(params, cfg, train_config, train_samples, prepared=prepared)
        losses = result.epoch_losses()
        rows.append(AblationRow(Variant(variant), evaluate(params, cfg, test_samples),
                                losses[0], losses[-1]))
    return AblationReport(rows)
