"""L2 density loss, plain SGD and the epoch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ._io import write_atomic
from .density import DEFAULT_SIGMA, downsample_preserving_count, generate_density_map
from .errors import ContractError, NumericError, ShapeError
from .model import DOWNSAMPLE, ModelConfig, ModelParams, forward, predict_count
from .tensor import Tensor, scale, square, sub, tsum
from .transforms import Sample, pad_to_multiple
from .weights import save_weights

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 1
    max_epochs: int = 400
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables checkpoints
    checkpoint_dir: Optional[str] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ContractError(f"max_epochs must be >= 1, got {self.max_epochs}")


def l2_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Half the squared Euclidean distance, averaged over the batch axis."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    n = pred.shape[0] if pred.ndim else 1
    return scale(tsum(square(sub(pred, gt))), 1.0 / (2 * n))


def sgd_step(params: ModelParams, lr: float, trainable: Optional[Iterable[str]] = None) -> None:
    """theta <- theta - lr * grad for every trainable tensor, then clear gradients."""
    names = list(params) if trainable is None else list(trainable)
    for name in names:
        t = params[name]
        if not t.requires_grad:
            continue
        if t.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; run backward() first")
    for name in names:
        t = params[name]
        if t.requires_grad:
            t.data = t.data - lr * t.grad
            t.grad = None


@dataclass
class Prepared:
    image: np.ndarray  # 3 x H x W
    target: np.ndarray  # H/8 x W/8
    count: int


def prepare_sample(sample: Sample, sigma: float = DEFAULT_SIGMA) -> Prepared:
    """Pad to a multiple of 8 and build the sum-pooled 1/8-resolution target."""
    s = pad_to_multiple(sample, DOWNSAMPLE)
    dmap = generate_density_map(s.points, s.height, s.width, sigma)
    target = downsample_preserving_count(dmap, DOWNSAMPLE).values
    return Prepared(s.image.transpose(2, 0, 1).copy(), target, sample.count)


@dataclass
class TrainResult:
    params: ModelParams
    log: List[Tuple[int, int, float]] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)  # one per epoch when validating

    def epoch_losses(self) -> List[float]:
        by_epoch = {}
        for epoch, _, loss in self.log:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]


def format_loss_log(log: Sequence[Tuple[int, int, float]]) -> str:
    return "".join(f"{e}\t{b}\t{loss!r}\n" for e, b, loss in log)


def parse_loss_log(text: str) -> List[Tuple[int, int, float]]:
    out = []
    for line in text.splitlines():
        if line.strip():
            e, b, loss = line.split("\t")
            out.append((int(e), int(b), float(loss)))
    return out


def _mae(params: ModelParams, model_config: ModelConfig, data: Sequence[Prepared]) -> float:
    errors = [abs(predict_count(params, model_config, Tensor(p.image[None])).raw - p.count)
              for p in data]
    return float(np.mean(errors))


def _max_abs_grad(params: ModelParams) -> float:
    vals = [np.max(np.abs(t.grad)) for t in params.values() if t.grad is not None]
    return float(max(vals)) if vals else float("nan")


def train(
    params: ModelParams,
    model_config: ModelConfig,
    config: TrainConfig,
    samples: Sequence[Sample],
    val_samples: Optional[Sequence[Sample]] = None,
    sigma: float = DEFAULT_SIGMA,
    prepared: Optional[Sequence[Prepared]] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Train ``params`` in place with minibatch SGD and return them with the loss log.

    Each epoch visits the samples in an order drawn from ``(seed, epoch)``.
    Images inside one batch must share a size. With ``val_samples`` the
    validation MAE is recorded after every epoch.
    """
    data = list(prepared) if prepared is not None else [prepare_sample(s, sigma) for s in samples]
    val = [prepare_sample(s, sigma) for s in val_samples] if val_samples else []
    if not data:
        raise ContractError("training needs at least one sample")
    result = TrainResult(params)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None and config.checkpoint_every:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
        for b, start in enumerate(range(0, len(data), config.batch_size)):
            batch = [data[i] for i in order[start:start + config.batch_size]]
            if len({p.image.shape for p in batch}) != 1:
                raise ShapeError("images in a batch differ in size; use batch_size 1")
            x = Tensor(np.stack([p.image for p in batch]))
            gt = Tensor(np.stack([p.target[None] for p in batch]))
            loss = l2_loss(forward(params, model_config, x), gt)
            value = loss.item()
            loss.backward()
            if not np.isfinite(value) or not np.isfinite(_max_abs_grad(params)):
                raise NumericError(f"non-finite training state at epoch {epoch}, batch {b}: "
                                   f"loss {value}, max |grad| {_max_abs_grad(params)}")
            sgd_step(params, config.learning_rate)
            result.log.append((epoch, b, value))
        if val:
            result.val_mae.append(_mae(params, model_config, val))
            logger.info("epoch %d: validation MAE %.4f", epoch, result.val_mae[-1])
        if on_epoch is not None:
            on_epoch(epoch, result.epoch_losses()[-1])
        if ckpt_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_weights(params, ckpt_dir / f"checkpoint_epoch{epoch:04d}.aspd")
        if config.log_path:
            write_atomic(config.log_path, format_loss_log(result.log))
    return result
