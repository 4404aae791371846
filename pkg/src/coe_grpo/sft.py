"""Chain-of-Evidence tuning: think/answer losses, KL to the reference policy,
and a deterministic gradient-descent loop.

The think loss covers every gold token except the label (the reasoning
sequence z, including the answer-region delimiters); the answer loss is the
label's log-probability at the answer slot, renormalized over {REAL, FAKE}.
Both are per-sequence sums, averaged over the batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import policy
from .optim import NumericError, descent_step
from .policy import TokenBatch, check_params, zero_params

__all__ = [
    "SftConfig", "GoldBatch", "NumericError", "loss_think", "loss_answer",
    "loss_sft", "grad_loss_sft", "sft_step", "train_sft", "greedy_accuracy",
]


@dataclass(frozen=True)
class SftConfig:
    alpha: float = 0.5
    eta: float = 0.01
    step_size: float = 0.05
    epochs: int = 300
    seed: int = 0
    batch_size: int = 0  # 0 = full batch
    acc_every: int = 1

    def __post_init__(self):
        # alpha = 1 is allowed: it is the answer-only ablation
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if self.epochs < 0 or self.batch_size < 0 or self.acc_every < 1:
            raise ValueError("epochs and batch_size must be >= 0, acc_every >= 1")

    def to_dict(self):
        return asdict(self)


class GoldBatch(TokenBatch):
    """Gold traces of a list of instances."""

    def __init__(self, instances: Sequence):
        if len(instances) == 0:
            raise ValueError("batch must be non-empty")
        super().__init__([i.gold_trace for i in instances], [i.features for i in instances])
        if np.bincount(self.owner[self.slots], minlength=self.n).min() != 1:
            raise ValueError("every gold trace needs exactly one answer slot")

    def terms(self, params, pre_params, alpha: float, eta: float) -> dict:
        lp = self.row_logprobs(params)
        think = ~self.slots
        l_think = -np.bincount(self.owner[think], weights=lp[think], minlength=self.n)
        l_answer = -lp[self.slots]
        kl = self.kl(pre_params, params) if eta else 0.0
        total = (1 - alpha) * l_think.mean() + alpha * l_answer.mean() + eta * kl
        return {
            "loss_sft": float(total),
            "loss_think_mean": float(l_think.mean()),
            "loss_answer_mean": float(l_answer.mean()),
            "kl": float(kl),
            "loss_think": l_think,
            "loss_answer": l_answer,
        }

    def grad(self, params, pre_params, alpha: float, eta: float) -> np.ndarray:
        weights = np.where(self.slots, -alpha / self.n, -(1 - alpha) / self.n)
        g = self.weighted_grad(params, weights)
        if eta:
            g = g + eta * self.kl_grad(pre_params, params)
        return g


def _gold(batch) -> GoldBatch:
    return batch if isinstance(batch, GoldBatch) else GoldBatch(batch)


def loss_think(params, instance) -> float:
    return float(GoldBatch([instance]).terms(params, params, 0.5, 0.0)["loss_think"][0])


def loss_answer(params, instance) -> float:
    return float(GoldBatch([instance]).terms(params, params, 0.5, 0.0)["loss_answer"][0])


def loss_sft(params, pre_params, batch, config: SftConfig) -> float:
    return _gold(batch).terms(params, pre_params, config.alpha, config.eta)["loss_sft"]


def grad_loss_sft(params, pre_params, batch, config: SftConfig) -> np.ndarray:
    return _gold(batch).grad(params, pre_params, config.alpha, config.eta)


def sft_step(params, pre_params, batch, config: SftConfig) -> np.ndarray:
    new, _ = _step(check_params(params), pre_params, _gold(batch), config)
    return new


def _step(params, pre, gb: GoldBatch, config: SftConfig):
    terms = gb.terms(params, pre, config.alpha, config.eta)
    g = gb.grad(params, pre, config.alpha, config.eta)
    loss = lambda w: gb.terms(w, pre, config.alpha, config.eta)["loss_sft"]
    new, t = descent_step(loss, params, terms["loss_sft"], g, config.step_size)
    return new, (terms, t)


def greedy_accuracy(params, instances) -> float:
    answers = policy.predict_answers(params, [i.features for i in instances])
    return sum(a == i.label for a, i in zip(answers, instances)) / len(instances)


def train_sft(dataset: Sequence, config: SftConfig,
              on_step: Callable[[dict, np.ndarray], None] | None = None) -> np.ndarray:
    """Gradient descent from the uniform policy, which is also the KL reference.

    ``on_step(record, params)`` gets one metrics record per step; the losses
    in it are measured before the update. With ``batch_size > 0`` each epoch
    walks a seed-derived permutation in consecutive mini-batches.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    pre = zero_params()
    params = zero_params()
    rng = np.random.default_rng(config.seed)
    full = GoldBatch(dataset)
    step = 0
    for _ in range(config.epochs):
        if config.batch_size:
            order = rng.permutation(len(dataset))
            batches = [GoldBatch([dataset[i] for i in order[k:k + config.batch_size]])
                       for k in range(0, len(dataset), config.batch_size)]
        else:
            batches = [full]
        for gb in batches:
            params, (terms, t) = _step(params, pre, gb, config)
            step += 1
            if on_step is not None:
                rec = {"step": step}
                rec.update({k: terms[k] for k in ("loss_sft", "loss_think_mean", "loss_answer_mean", "kl")})
                rec["step_taken"] = t
                rec["train_acc"] = (
                    greedy_accuracy(params, dataset) if step % config.acc_every == 0 else None
                )
                on_step(rec, params)
    return params
