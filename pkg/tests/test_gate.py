import math

import mpmath
import numpy as np
import pytest

from gatelab.errors import EmptyResponse, InvalidInput
from gatelab.gate import (
    GateConfig,
    Statistic,
    compute_gate,
    gate_complement,
    gate_value,
    seq_statistic,
    tok_statistic,
    toy_gate,
)
from gatelab.probability import ScoredResponse


def resp(probs, mask=None):
    return ScoredResponse(np.log(probs), mask)


def mp_sigmoid(x):
    with mpmath.workdps(40):
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(x))))


def test_defaults():
    assert GateConfig().tau == 0.10
    assert GateConfig(Statistic.TOKEN_QUANTILE).tau == 0.005
    assert GateConfig().alpha == 50.0 and GateConfig().q == 0.10


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(tau=1.0), dict(alpha=0.0), dict(q=1.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidInput):
        GateConfig(**kw)


def test_seq_statistic_examples():
    assert seq_statistic(resp([0.1, 0.4])) == pytest.approx(0.2, rel=1e-14)
    assert seq_statistic(resp([0.37] * 5)) == pytest.approx(0.37, rel=1e-14)
    with mpmath.workdps(40):
        oracle = float(mpmath.mpf("0.03125") ** (mpmath.mpf(1) / 3))
    assert seq_statistic(resp([0.5, 0.5, 0.125])) == pytest.approx(oracle, rel=1e-14)
    assert oracle == pytest.approx(0.31498, abs=1e-5)


def test_tok_statistic_examples():
    assert tok_statistic(resp([0.9, 0.8, 0.001, 0.7]), 0.10) == pytest.approx(0.001, rel=1e-14)
    assert tok_statistic(resp([0.3]), 0.1) == pytest.approx(0.3, rel=1e-14)
    assert tok_statistic(resp([0.5] * 6), 0.1) == pytest.approx(0.5, rel=1e-14)


def test_statistics_ignore_masked_content():
    mask = [True, False, True]
    a, b = resp([0.2, 1e-9, 0.5], mask), resp([0.2, 0.99, 0.5], mask)
    assert seq_statistic(a) == seq_statistic(b)
    assert tok_statistic(a) == tok_statistic(b)
    with pytest.raises(EmptyResponse):
        seq_statistic(resp([0.5], [False]))


def test_gate_value_examples():
    cfg = GateConfig(tau=0.10, alpha=50)
    assert gate_value(0.10, cfg).gate_value == 0.5
    assert gate_value(0.0, cfg).gate_value == pytest.approx(mp_sigmoid(-5), rel=1e-14)
    assert gate_value(0.0, cfg).gate_value == pytest.approx(0.0066929, abs=1e-7)
    g = gate_value(0.30, cfg).gate_value
    assert g == pytest.approx(mp_sigmoid(10), rel=1e-14)
    assert 1 - g <= math.exp(-10)
    assert gate_value(0.2, cfg).detached
    with pytest.raises(InvalidInput):
        gate_value(-0.01, cfg)


def test_compute_gate_uses_statistic():
    r = resp([0.5, 0.5, 0.125])
    cfg = GateConfig(Statistic.TOKEN_QUANTILE, tau=0.1)
    res = compute_gate(r, cfg)
    assert res.statistic_value == pytest.approx(0.125)
    assert res.gate_value == gate_value(res.statistic_value, cfg).gate_value


def test_toy_gate_examples():
    tau, alpha = 0.03, 50.0
    assert toy_gate(tau, tau, alpha) == 0.5
    assert toy_gate(tau * math.exp(1 / alpha), tau, alpha) == pytest.approx(mp_sigmoid(1), rel=1e-12)
    low = toy_gate(tau * math.exp(-100 / alpha), tau, alpha)
    assert 0.0 < low < 1e-40
    with pytest.raises(InvalidInput):
        toy_gate(0.0, tau, alpha)


def test_gate_monotonicity():
    rng = np.random.default_rng(3)
    for _ in range(200):
        tau, alpha = rng.uniform(0.01, 0.5), rng.uniform(1, 100)
        cfg = GateConfig(tau=tau, alpha=alpha)
        s = np.sort(rng.uniform(0, 1, 2))
        if s[1] - s[0] > 1e-6 and abs(alpha * (s[1] - tau)) < 30:
            assert gate_value(s[0], cfg).gate_value < gate_value(s[1], cfg).gate_value
        t2 = tau * 0.9
        sv = rng.uniform(0, 1)
        if abs(alpha * (sv - t2)) < 30:
            assert gate_value(sv, GateConfig(tau=t2, alpha=alpha)).gate_value > gate_value(sv, cfg).gate_value


def test_saturated_gate_stays_strictly_inside_unit_interval():
    cfg = GateConfig(tau=0.5, alpha=5000.0)
    assert 0.0 < gate_value(0.0, cfg).gate_value
    assert gate_value(1.0, cfg).gate_value < 1.0


def test_gate_complement_keeps_the_tail():
    cfg = GateConfig(tau=0.1, alpha=50)
    assert gate_complement(0.1, cfg) == 0.5
    assert gate_complement(0.9, cfg) == pytest.approx(mp_sigmoid(-40), rel=1e-14)
    # subtraction from the stored gate cannot go below 2**-53
    assert 1 - gate_value(0.9, cfg).gate_value == 2.0**-53
    assert gate_complement(0.3, cfg) == pytest.approx(1 - gate_value(0.3, cfg).gate_value, rel=1e-6)
