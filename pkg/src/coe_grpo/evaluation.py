"""Greedy-decoding evaluation and the blur / quantization robustness sweep."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import policy
from .env import ForensicInstance, ToyImage, instance_from_image
from .rewards import OracleJudge, RewardWeights, composite_reward
from .vocab import ABSTAIN, LABELS, token_names

BLUR_SIGMAS = (1.0, 2.0, 3.0, 4.0)
# stand-ins for JPEG quality 90 / 80 / 70 / 60
QUANT_STEPS = (1 / 32, 1 / 16, 1 / 8, 1 / 4)
EVAL_SEED = 0


@dataclass
class EvalReport:
    n: int
    correct: int
    accuracy: float
    per_label_accuracy: dict
    abstain_rate: float
    mean_rewards: dict
    predictions: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("predictions")
        return d

    def line(self) -> str:
        per = " ".join(f"{k}={v:.4f}" for k, v in self.per_label_accuracy.items() if v is not None)
        return (f"n={self.n} accuracy={self.accuracy:.4f} ({self.correct}/{self.n}) "
                f"{per} abstain={self.abstain_rate:.4f}")


def _perturb_seed(index: int) -> int:
    ss = np.random.SeedSequence(EVAL_SEED, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def evaluate(params, instances: Sequence[ForensicInstance], weights: RewardWeights | None = None,
             judge=None) -> EvalReport:
    """Greedy-decode every instance; ABSTAIN counts as wrong.

    Reward components are scored with the oracle judge on the greedy trace.
    """
    if len(instances) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    params = policy.check_params(params)
    weights = weights or RewardWeights()
    judge = judge or OracleJudge()
    trajs = policy.greedy_decode_many(params, [i.features for i in instances])
    preds, comps = [], []
    for k, (inst, traj) in enumerate(zip(instances, trajs)):
        b = composite_reward(traj, inst, weights, _perturb_seed(k), judge, params)
        comps.append((b.r_sem, b.r_think, b.r_view, b.total))
        preds.append({
            "index": k,
            "seed": int(inst.seed),
            "label": inst.label,
            "prediction": traj.answer,
            "correct": traj.answer == inst.label,
            "trace": token_names(traj.trace),
        })
    n = len(preds)
    correct = sum(p["correct"] for p in preds)
    per_label = {}
    for lab in LABELS:
        rows = [p for p in preds if p["label"] == lab]
        per_label[lab] = sum(p["correct"] for p in rows) / len(rows) if rows else None
    means = np.asarray(comps, dtype=float).mean(axis=0)
    return EvalReport(
        n=n,
        correct=correct,
        accuracy=correct / n,
        per_label_accuracy=per_label,
        abstain_rate=sum(p["prediction"] == ABSTAIN for p in preds) / n,
        mean_rewards=dict(zip(("r_sem", "r_think", "r_view", "total"), means.tolist())),
        predictions=preds,
    )


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma 0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(pixels, dtype=float)
    return np.clip(gaussian_filter(np.asarray(pixels, dtype=float), sigma, mode="reflect", truncate=3.0), 0.0, 1.0)


def quantize(pixels: np.ndarray, step: float) -> np.ndarray:
    """Uniform quantization to multiples of ``step``; step 0 is the identity."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step == 0:
        return np.array(pixels, dtype=float)
    return np.clip(np.round(np.asarray(pixels, dtype=float) / step) * step, 0.0, 1.0)


PERTURBATIONS = {"blur": (gaussian_blur, BLUR_SIGMAS), "quantization": (quantize, QUANT_STEPS)}


def perturb_instance(inst: ForensicInstance, kind: str, level: float) -> ForensicInstance:
    """Distort the grid, then rerun detectors, views and featurization on it."""
    fn, _ = PERTURBATIONS[kind]
    image = ToyImage(fn(inst.image.pixels, level), inst.image.seed)
    return instance_from_image(image, inst.truth, inst.stratum)


def robustness(params, instances: Sequence[ForensicInstance], blur_sigmas=BLUR_SIGMAS,
               quant_steps=QUANT_STEPS) -> dict:
    """``{"control": report, "blur": [(sigma, report)...], "quantization": [...]}``.

    The control applies the identity perturbation (sigma 0) through the same
    pipeline, so it must reproduce a plain evaluation exactly.
    """
    out = {"control": evaluate(params, [perturb_instance(i, "blur", 0.0) for i in instances])}
    for kind, levels in (("blur", blur_sigmas), ("quantization", quant_steps)):
        out[kind] = [
            (float(lv), evaluate(params, [perturb_instance(i, kind, lv) for i in instances]))
            for lv in levels
        ]
    return out
