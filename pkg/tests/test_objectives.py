import math

import mpmath
import numpy as np
import pytest

from gatelab.errors import InvalidInput
from gatelab.gate import GateConfig, GateResult
from gatelab.objectives import (
    LossConfig,
    Objective,
    PairAdvantages,
    analytic_vs_numeric_grads,
    caldpo_family_loss,
    dpo_family_loss,
    evaluate_batch,
    evaluate_pair,
    gated_logit,
    ipo_family_loss,
)
from gatelab.probability import ScoredResponse

def adv(dp, dm):
    return PairAdvantages.from_deltas(dp, dm)


def test_advantages():
    a = PairAdvantages(-3.0, -5.0, -4.0, -2.5)
    assert a.delta_chosen == 1.0 and a.delta_rejected == -2.5


def test_gated_logit_examples():
    assert gated_logit(adv(1.7, 1.7), 1.0, 0.1) == 0.0
    assert gated_logit(adv(2, -4), 0.5, 0.1) == pytest.approx(0.4, abs=1e-15)
    a = adv(0.37, -2.9)
    assert gated_logit(a, 1.0, 0.1) == 0.1 * (0.37 - (-2.9))
    for g in (0.0, 1.5):
        with pytest.raises(InvalidInput):
            gated_logit(a, g, 0.1)


def test_dpo_examples():
    r = dpo_family_loss(adv(0, 0), LossConfig("DPO"))
    assert r.loss == pytest.approx(math.log(2), abs=1e-15)
    assert r.grad_chosen == pytest.approx(-0.05, abs=1e-15)
    assert r.grad_rejected == pytest.approx(0.05, abs=1e-15)
    assert r.gate.gate_value == 1.0

    r = dpo_family_loss(adv(1, -1), LossConfig("DPO", gated=True), gate=0.5)
    with mpmath.workdps(40):
        z = mpmath.mpf("0.15")
        loss = float(mpmath.log1p(mpmath.exp(-z)))
        c = float(mpmath.mpf("0.1") * (1 - 1 / (1 + mpmath.exp(-z))))
    assert r.z == pytest.approx(0.15, abs=1e-15)
    assert r.loss == pytest.approx(loss, rel=1e-14)
    assert r.grad_coeff == pytest.approx(c, rel=1e-14)
    assert r.grad_rejected == pytest.approx(0.5 * c, rel=1e-14)
    assert (r.grad_coeff, r.grad_rejected) == pytest.approx((0.0462565, 0.0231283), abs=1e-6)
    # ln(1 + e^-0.15); the oracle value, not the rounded 0.62045 quoted elsewhere
    assert r.loss == pytest.approx(0.6209570, abs=1e-7)


def test_ipo_examples():
    # z = beta * delta = 1/(2 beta) = 5 at delta_chosen = 50
    r = ipo_family_loss(adv(50.0, 0.0), LossConfig("IPO"))
    assert r.loss == pytest.approx(0.0, abs=1e-24)
    assert r.grad_chosen == pytest.approx(0.0, abs=1e-12) and r.grad_rejected == pytest.approx(0.0, abs=1e-12)
    assert ipo_family_loss(adv(0, 0), LossConfig("IPO")).loss == 25.0


def test_caldpo_examples():
    cfg = LossConfig("CalDPO")
    c = cfg.c_cal
    assert c == 500.0
    r = caldpo_family_loss(adv(c, -c), cfg)
    assert r.loss == pytest.approx(math.log1p(math.exp(-2 * c)), abs=1e-300)
    r = caldpo_family_loss(adv(0, 0), cfg)
    assert r.loss == pytest.approx(500000.6931471806, rel=1e-15)
    on = caldpo_family_loss(adv(0.3, -0.2), LossConfig("CalDPO", beta_in_sigmoid=True))
    assert on.z == pytest.approx(1e-3 * 0.5)


@pytest.mark.parametrize("obj", list(Objective))
def test_forced_unit_gate_reduces_to_ungated(obj):
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = adv(*rng.uniform(-20, 20, 2))
        beta = 10 ** rng.uniform(-3, 0)
        u = evaluate_pair(a, LossConfig(obj, beta=beta))
        g = evaluate_pair(a, LossConfig(obj, gated=True, beta=beta), gate=1.0)
        for f in ("z", "loss", "grad_coeff", "grad_chosen", "grad_rejected"):
            assert getattr(g, f) == pytest.approx(getattr(u, f), abs=1e-12, rel=1e-12)


def test_dpo_family_invariants():
    rng = np.random.default_rng(5)
    for _ in range(500):
        a = adv(*rng.uniform(-20, 20, 2))
        g = float(rng.uniform(1e-6, 1))
        beta = float(10 ** rng.uniform(-2, 0))
        r = dpo_family_loss(a, LossConfig("DPO", gated=True, beta=beta), gate=g)
        assert r.loss >= 0 and r.grad_coeff >= 0
        assert r.grad_chosen == -r.grad_coeff
        assert r.grad_rejected == g * r.grad_coeff
        assert abs(r.grad_rejected) <= r.grad_coeff
        assert ipo_family_loss(a, LossConfig("IPO", gated=True, beta=beta), gate=g).loss >= 0
        assert caldpo_family_loss(a, LossConfig("CalDPO", gated=True, beta=beta), gate=g).loss >= 0


def test_grad_coeff_strictly_decreasing_in_z():
    zs = np.linspace(-20, 20, 401)
    cs = [dpo_family_loss(adv(z / 0.1, 0.0), LossConfig("DPO")).grad_coeff for z in zs]
    assert all(a > b for a, b in zip(cs, cs[1:]))


def test_gated_needs_rejected_response():
    with pytest.raises(InvalidInput):
        dpo_family_loss(adv(0, 0), LossConfig("DPO", gated=True))
    with pytest.raises(InvalidInput):
        ipo_family_loss(adv(0, 0), LossConfig("DPO"))


def test_batch_mean_and_per_pair_gates():
    cfg = LossConfig("DPO", gated=True, gate=GateConfig(tau=0.1))
    advs = [adv(1, -1), adv(0.5, 2.0)]
    rej = [ScoredResponse(np.log([0.01, 0.02])), ScoredResponse(np.log([0.5, 0.6]))]
    b = evaluate_batch(advs, cfg, rej)
    assert b.loss == pytest.approx((b.pairs[0].loss + b.pairs[1].loss) / 2, rel=1e-15)
    assert b.gate_values[0] < 0.5 < b.gate_values[1]
    with pytest.raises(InvalidInput):
        evaluate_batch([], cfg)


@pytest.mark.parametrize("obj", list(Objective))
def test_ungated_fd_check(obj):
    rng = np.random.default_rng(2)
    for _ in range(50):
        gc = analytic_vs_numeric_grads(adv(*rng.uniform(-10, 10, 2)), LossConfig(obj), h=1e-5)
        assert gc.max_rel_err <= 1e-6


def test_detached_fd_ratio_equals_gate():
    cfg = LossConfig("DPO", gated=True, gate=GateConfig(tau=0.1, alpha=50))
    rej = ScoredResponse(np.log([0.08, 0.11, 0.09]))
    a = adv(0.8, -1.3)
    gated = analytic_vs_numeric_grads(a, cfg, rej)
    g = gated.gate_value
    # same gated logit for the ungated probe: scale the rejected advantage by g
    plain = analytic_vs_numeric_grads(adv(0.8, -1.3 * g), LossConfig("DPO"))
    assert gated.numeric_rejected / plain.numeric_rejected == pytest.approx(g, rel=1e-5)
    live = analytic_vs_numeric_grads(a, cfg, rej, mode="recompute")
    assert abs(live.numeric_rejected / plain.numeric_rejected - g) > abs(
        gated.numeric_rejected / plain.numeric_rejected - g
    )


def test_probe_validation():
    with pytest.raises(InvalidInput):
        analytic_vs_numeric_grads(adv(0, 0), LossConfig("DPO"), h=1e-2)
    with pytest.raises(InvalidInput):
        analytic_vs_numeric_grads(adv(0, 0), LossConfig("DPO"), mode="recompute")


def test_explicit_gate_result_is_passed_through():
    gr = GateResult(0.05, 0.3)
    r = dpo_family_loss(adv(1, 1), LossConfig("DPO", gated=True), gate=gr)
    assert r.gate is gr
