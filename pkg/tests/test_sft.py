import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coe_grpo import policy, sft
from coe_grpo.policy import zero_params
from coe_grpo.sft import GoldBatch, SftConfig
from coe_grpo.vocab import Token as T

from _oracles import central_diff, rel_err


def rand_params(seed, scale=0.5):
    return np.random.default_rng(seed).normal(0, scale, size=(16, policy.CONTEXT_DIM))


def think_len(inst):
    return len(inst.gold_trace) - 1  # everything but the label


def test_config_validation():
    with pytest.raises(ValueError):
        SftConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SftConfig(alpha=1.5)
    with pytest.raises(ValueError):
        SftConfig(eta=-1)
    SftConfig(alpha=1.0)  # answer-only ablation


def test_zero_param_losses(small_set):
    inst = small_set[0]
    assert sft.loss_think(zero_params(), inst) == pytest.approx(think_len(inst) * math.log(16), rel=1e-12)
    assert sft.loss_answer(zero_params(), inst) == pytest.approx(math.log(2), rel=1e-12)


def test_confident_params_small_think_loss(small_set):
    # drive every gold token to probability >= 0.999 with a lookup on the previous token
    inst = next(i for i in small_set if len(i.gold_trace) == 6)
    W = zero_params()
    prev = policy.BOS
    for tok in inst.gold_trace:
        W[int(tok), policy._PREV.start + prev] = 20.0
        prev = int(tok)
    for k, p in enumerate(policy.step_logprobs(W, inst.features, inst.gold_trace)):
        assert p >= math.log(0.999)
    assert sft.loss_think(W, inst) <= think_len(inst) * 0.001001


def test_answer_loss_known_probability(small_set):
    inst = next(i for i in small_set if i.label == "FAKE")
    W = zero_params()
    W[T.FAKE, 17] = math.log(9.0) / policy.FEATURE_GAIN  # p(FAKE) = 0.9 through the bias entry
    assert sft.loss_answer(W, inst) == pytest.approx(-math.log(0.9), abs=1e-12)


@given(st.integers(0, 10**6))
def test_losses_non_negative(seed):
    from coe_grpo import env
    inst = env.gen_dataset(seed % 50, 1, 1)[seed % 2]
    W = rand_params(seed)
    assert sft.loss_think(W, inst) >= 0 and sft.loss_answer(W, inst) >= 0


def test_loss_sft_algebra(small_set):
    W = rand_params(1)
    pre = rand_params(2)
    batch = small_set[:2]
    cfg = SftConfig(alpha=0.5, eta=0.0)
    per = [0.5 * (sft.loss_think(W, i) + sft.loss_answer(W, i)) for i in batch]
    assert sft.loss_sft(W, pre, batch, cfg) == pytest.approx(np.mean(per), abs=1e-12)
    cfg = SftConfig(alpha=0.3, eta=0.7)
    kl = GoldBatch(batch).kl(pre, W)
    expect = 0.7 * np.mean([sft.loss_think(W, i) for i in batch]) \
        + 0.3 * np.mean([sft.loss_answer(W, i) for i in batch]) + 0.7 * kl
    assert sft.loss_sft(W, pre, batch, cfg) == pytest.approx(expect, abs=1e-12)


def test_kl_zero_when_params_equal_pre(small_set):
    W = rand_params(3)
    terms = GoldBatch(small_set[:3]).terms(W, W, 0.5, 5.0)
    assert terms["kl"] == 0.0


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_alpha_monotone_weighting(a, da):
    # d loss / d alpha = L_answer - L_think
    from coe_grpo import env
    batch = env.gen_dataset(0, 2, 2)
    W = rand_params(5)
    lo = sft.loss_sft(W, W, batch, SftConfig(alpha=a, eta=0))
    hi = sft.loss_sft(W, W, batch, SftConfig(alpha=a + da, eta=0))
    t = GoldBatch(batch).terms(W, W, a, 0)
    diff = t["loss_answer_mean"] - t["loss_think_mean"]
    assert (hi - lo) == pytest.approx(da * diff, rel=1e-8, abs=1e-12)
    assert np.sign(hi - lo) == np.sign(diff)


@pytest.mark.parametrize("seed", range(3))
def test_grad_loss_sft_finite_differences(small_set, seed):
    rng = np.random.default_rng(seed)
    W, pre = rand_params(seed), rand_params(seed + 100)
    batch = [small_set[k] for k in rng.choice(len(small_set), 3, replace=False)]
    cfg = SftConfig(alpha=0.4, eta=0.3)
    g = sft.grad_loss_sft(W, pre, batch, cfg)
    coords = rng.choice(W.size, 20, replace=False)
    fd = central_diff(lambda w: sft.loss_sft(w, pre, batch, cfg), W, coords)
    assert rel_err(g.flat[coords], fd).max() <= 1e-4


def test_step_size_zero_keeps_params(small_set):
    W = rand_params(0)
    assert np.array_equal(sft.sft_step(W, zero_params(), small_set[:2], SftConfig(step_size=0.0)), W)


def test_single_step_decreases_loss(small_set):
    cfg = SftConfig(step_size=0.01)
    inst = small_set[:1]
    new = sft.sft_step(zero_params(), zero_params(), inst, cfg)
    assert sft.loss_sft(new, zero_params(), inst, cfg) < sft.loss_sft(zero_params(), zero_params(), inst, cfg)


def test_train_sft_deterministic_and_decreasing(small_set):
    cfg = SftConfig(epochs=20)
    recs_a, recs_b = [], []
    a = sft.train_sft(small_set, cfg, lambda r, p: recs_a.append(r))
    b = sft.train_sft(small_set, cfg, lambda r, p: recs_b.append(r))
    assert np.array_equal(a, b) and recs_a == recs_b
    losses = [r["loss_sft"] for r in recs_a]
    assert np.isfinite(losses).all() and losses[-1] <= losses[0]
    assert set(recs_a[0]) >= {"step", "loss_sft", "loss_think_mean", "loss_answer_mean", "kl", "train_acc"}


def test_minibatch_mode_runs(small_set):
    recs = []
    sft.train_sft(small_set, SftConfig(epochs=2, batch_size=7), lambda r, p: recs.append(r))
    assert len(recs) == 2 * 3


def test_huge_eta_stays_near_pre(small_set):
    W = sft.train_sft(small_set, SftConfig(eta=1e6, epochs=50))
    assert GoldBatch(small_set).kl(zero_params(), W) <= 1e-3


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        sft.train_sft([], SftConfig())
