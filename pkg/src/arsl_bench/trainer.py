"""Training protocol: Adam, cross-entropy, step decay and early stopping.

The optimiser is written out here instead of using ``torch.optim.Adam`` so
the update rule, and the guarantee that frozen parameters are never
touched, are explicit and testable.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .errors import DivergenceError, EmptySplitError, LabelRangeError, ShapeError
from .eval_report import accuracy, predict_labels
from .model_zoo import ModelAdapter, save_checkpoint
from .records import EpochRecord, RunRecord, TrainConfig

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def step_lr(epoch: int, base_lr: float = 0.001, lr_gamma: float = 0.1, lr_step_epochs: int = 10) -> float:
    """``base_lr * lr_gamma ** (epoch // lr_step_epochs)``.

    Evaluated in exact rational arithmetic, so epoch 25 gives 1e-05 rather
    than 1.0000000000000003e-05.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    k = epoch // lr_step_epochs
    return float(Fraction(str(base_lr)) * Fraction(str(lr_gamma)) ** k)


def cross_entropy(logits, labels) -> torch.Tensor:
    """Mean negative log-softmax of the true class, via max-shifted log-sum-exp."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}")
    num_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(f"labels must lie in [0, {num_classes})")
    shift = logits.max(dim=1, keepdim=True).values.detach()
    z = logits - shift
    log_norm = torch.log(torch.exp(z).sum(dim=1))
    picked = z.gather(1, labels[:, None]).squeeze(1)
    return (log_norm - picked).mean()


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Closed-form d(loss)/d(logits) = (softmax - onehot) / B."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def linear_head_grads(features: np.ndarray, weight: np.ndarray, bias: np.ndarray, labels: np.ndarray):
    """Analytic gradients of the mean cross-entropy w.r.t. a linear head."""
    features = np.asarray(features, dtype=np.float64)
    g = cross_entropy_grad(features @ np.asarray(weight, dtype=np.float64).T + bias, labels)
    return g.T @ features, g.sum(axis=0)


def early_stop_check(val_acc_history: Sequence[float], patience: int = 5) -> bool:
    """True when none of the last ``patience`` epochs beat the earlier best.

    Only a strictly greater value counts as an improvement.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(val_acc_history) <= patience:
        return False
    best_before = max(val_acc_history[:-patience])
    return all(v <= best_before for v in val_acc_history[-patience:])


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.exp_avg):
        raise ShapeError("params, grads and optimiser state have different lengths")
    b1, b2 = betas
    state.step += 1
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {tuple(p.shape)} vs gradient {tuple(g.shape)}")
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


@torch.no_grad()
def predict(model: ModelAdapter, x, batch_size: int = 64) -> np.ndarray:
    model.eval()
    x = torch.as_tensor(x)
    out = [predict_labels(model(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def split_accuracy(model: ModelAdapter, x, y, batch_size: int = 64) -> float:
    return accuracy(predict(model, x, batch_size), np.asarray(y))


def _as_split(data) -> tuple[torch.Tensor, torch.Tensor]:
    x, y = data
    return torch.as_tensor(x, dtype=torch.float32), torch.as_tensor(y, dtype=torch.long)


def train(
    model: ModelAdapter,
    splits: Mapping[str, tuple],
    train_config: TrainConfig | None = None,
    dataset: str = "synthetic",
    checkpoint_dir=None,
    extra: dict | None = None,
) -> RunRecord:
    """Fine-tune ``model`` on ``splits["train"]`` and evaluate on val/test.

    ``splits`` maps ``train``/``val``/``test`` to ``(X, y)`` with X shaped
    (N, 3, H, W) in [0, 1]. Only parameters with ``requires_grad`` are
    optimised. Early stopping watches validation accuracy; the best epoch's
    weights are restored before the final evaluation.
    """
    cfg = train_config or TrainConfig()
    x_train, y_train = _as_split(splits["train"])
    if len(x_train) == 0:
        raise EmptySplitError("training split is empty")
    x_val, y_val = _as_split(splits["val"])
    if len(x_val) == 0:
        raise EmptySplitError("validation split is empty")
    test = splits.get("test")
    x_test, y_test = _as_split(test) if test is not None and len(test[0]) else (None, None)

    params = model.trainable_parameters()
    state = AdamState.fresh(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(x_train)
    eval_bs = max(cfg.batch_size, 64)

    history: list[EpochRecord] = []
    best_epoch, best_val = -1, -math.inf
    best_state = None
    stopped_early = False
    started = time.perf_counter()

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = step_lr(epoch, cfg.base_lr, cfg.lr_gamma, cfg.lr_step_epochs)
        model.train()
        order = torch.as_tensor(rng.permutation(n))
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss = cross_entropy(model(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(epoch, b, loss.item())
            grads = torch.autograd.grad(loss, params)
            adam_step(params, grads, state, lr)
            loss_sum += loss.item() * len(idx)

        train_acc = split_accuracy(model, x_train, y_train, eval_bs)
        val_acc = split_accuracy(model, x_val, y_val, eval_bs)
        rec = EpochRecord(epoch, lr, loss_sum / n, train_acc, val_acc, time.perf_counter() - t0)
        history.append(rec)
        logger.info(
            "epoch %d lr %.2e loss %.4f train %.4f val %.4f (%.1fs)",
            epoch, lr, rec.train_loss, train_acc, val_acc, rec.duration_s,
        )

        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())
            if checkpoint_dir is not None:
                save_checkpoint(model, Path(checkpoint_dir) / "best", epoch, val_acc)
        if checkpoint_dir is not None:
            save_checkpoint(model, Path(checkpoint_dir) / "last", epoch, val_acc)

        if early_stop_check([h.val_acc for h in history], cfg.early_stop_patience):
            stopped_early = True
            break

    total_time = time.perf_counter() - started
    last = history[-1]
    model.load_state_dict(best_state)
    model.eval()
    final_train = split_accuracy(model, x_train, y_train, eval_bs)
    final_val = split_accuracy(model, x_val, y_val, eval_bs)
    final_test = split_accuracy(model, x_test, y_test, eval_bs) if x_test is not None else float("nan")

    return RunRecord(
        config=cfg,
        model=model.describe(),
        dataset=dataset,
        history=history,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
        train_acc=final_train,
        val_acc=final_val,
        test_acc=final_test,
        last_train_acc=last.train_acc,
        last_val_acc=last.val_acc,
        total_train_time_s=total_time,
        extra=dict(extra or {}),
    )
