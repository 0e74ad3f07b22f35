"""Single-example multiclass logistic regression under positive and negative
cross-entropy steps, with and without the log-space gate.

With a unit-norm feature vector the logit update induced by
``W <- W - eta * g * phi (p - e_y)^T`` is exactly ``z <- z - eta * g * (p - e_y)``,
so scenario behaviour does not depend on the feature dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidScenario
from .gate import toy_gate
from .probability import entropy, log_softmax

TAIL_FRACTION = 0.9


def unit_feature(d: int = 8, seed: int = 0) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(d)
    return v / np.linalg.norm(v)


@dataclass
class ToyState:
    W: np.ndarray
    phi: np.ndarray
    eta: float
    target: int

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def logits(self) -> np.ndarray:
        return self.W.T @ self.phi

    @property
    def p(self) -> np.ndarray:
        return np.exp(log_softmax(self.logits))

    @classmethod
    def realizing(cls, p0, phi, eta: float, target: int) -> "ToyState":
        """W = phi ln(p0)^T, so that W^T phi = ln p0 for unit-norm phi."""
        p0 = np.asarray(p0, dtype=np.float64)
        if np.any(p0 <= 0):
            raise InvalidScenario("initial distribution must be strictly positive")
        return cls(W=np.outer(phi, np.log(p0)), phi=np.asarray(phi, dtype=np.float64), eta=eta, target=target)


def _update(state: ToyState, scale: float) -> ToyState:
    p = state.p
    resid = p.copy()
    resid[state.target] -= 1.0
    W = state.W - (state.eta * scale) * np.outer(state.phi, resid)
    return replace(state, W=W)


def baseline_step(state: ToyState) -> ToyState:
    return _update(state, 1.0)


def gated_step(state: ToyState, tau: float, alpha: float) -> tuple[ToyState, float]:
    g = toy_gate(float(state.p[state.target]), tau, alpha)
    return _update(state, g), g


# --- scenarios --------------------------------------------------------------


def flat(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def peak(K: int, peak_class: int = 0, p_peak: float = 0.9) -> np.ndarray:
    p = np.full(K, (1.0 - p_peak) / (K - 1))
    p[peak_class] = p_peak
    return p


def valley(K: int, target: int = 0, p_target: float = 1e-6, argmax: int = 1, p_argmax: float = 0.9) -> np.ndarray:
    if target == argmax:
        raise InvalidScenario("valley target and argmax class must differ")
    p = np.full(K, (1.0 - p_target - p_argmax) / (K - 2))
    p[target] = p_target
    p[argmax] = p_argmax
    return p


@dataclass
class ToyScenario:
    label: str
    K: int
    initial_distribution: np.ndarray
    eta: float = -1.0
    steps: int = 1
    tau: float = 0.03
    alpha: float = 50.0
    strict_tau: float = 0.01
    target: int = 0
    d: int = 8
    seed: int = 0
    description: str = ""

    def __post_init__(self):
        p = np.asarray(self.initial_distribution, dtype=np.float64)
        if p.shape != (self.K,):
            raise InvalidScenario(f"scenario {self.label}: distribution has shape {p.shape}, K={self.K}")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise InvalidScenario(f"scenario {self.label}: initial distribution has non-positive entries")
        if abs(p.sum() - 1.0) > 1e-9:
            raise InvalidScenario(f"scenario {self.label}: initial distribution sums to {p.sum()}")
        if not 0 <= self.target < self.K:
            raise InvalidScenario(f"scenario {self.label}: target {self.target} out of range")
        if self.steps < 0:
            raise InvalidScenario("steps must be >= 0")
        self.initial_distribution = p


def default_scenarios(d: int = 8, seed: int = 0) -> dict[str, ToyScenario]:
    small = dict(tau=0.03, strict_tau=0.01, alpha=50.0, d=d, seed=seed)
    large = dict(tau=1e-8, strict_tau=1e-6, alpha=50.0, d=d, seed=seed)
    return {
        "A": ToyScenario("A", 50, flat(50), eta=1.0, description="positive gradient, flat", **small),
        "B": ToyScenario("B", 50, flat(50), eta=-1.0, description="negative gradient, flat", **small),
        "C": ToyScenario("C", 50, peak(50, 0, 0.9), eta=-1.0, description="negative gradient, peak", **small),
        "D": ToyScenario("D", 50, valley(50, 0, 1e-6, 1, 0.9), eta=-1.0, description="negative gradient, valley", **small),
        "E": ToyScenario(
            "E", 1000, valley(1000, 0, 1e-10, 1, 0.5), eta=-1.0, description="negative gradient, K=1000", **large
        ),
    }


@dataclass(frozen=True)
class ToyDiagnostics:
    p_target_before: float
    p_target_after: float
    delta_target: float
    delta_max: float
    argmax_mass_change: float
    entropy_before: float
    entropy_after: float
    gate_value: float
    tail_mass_change_rel: float


def tail_indices(p_before: np.ndarray, fraction: float = TAIL_FRACTION) -> np.ndarray:
    """Indices of the lowest-probability ``floor(fraction*K)`` classes (stable order on ties)."""
    n = int(np.floor(fraction * p_before.shape[0]))
    return np.argsort(p_before, kind="stable")[:n]


def diagnose(p_before, p_after, target: int, gate: float) -> ToyDiagnostics:
    p_before = np.asarray(p_before)
    p_after = np.asarray(p_after)
    top = int(np.argmax(p_before))
    tail = tail_indices(p_before)
    tail_before = p_before[tail].sum()
    diff = p_after - p_before
    return ToyDiagnostics(
        p_target_before=float(p_before[target]),
        p_target_after=float(p_after[target]),
        delta_target=float(diff[target]),
        delta_max=float(np.abs(diff).max()),
        argmax_mass_change=float(diff[top]),
        entropy_before=entropy(p_before),
        entropy_after=entropy(p_after),
        gate_value=float(gate),
        tail_mass_change_rel=float((p_after[tail].sum() - tail_before) / tail_before),
    )


@dataclass
class ScenarioResult:
    scenario: ToyScenario
    baseline: ToyDiagnostics
    gated: ToyDiagnostics
    p_before: np.ndarray
    p_after_baseline: np.ndarray
    p_after_gated: np.ndarray
    gate_trace: list = field(default_factory=list)


def run_scenario(s: ToyScenario, tau: float | None = None) -> ScenarioResult:
    """Baseline and gated runs of ``s.steps`` updates from one shared start.

    The reported gate value is the one applied at the first step.
    """
    tau = s.tau if tau is None else tau
    phi = unit_feature(s.d, s.seed)
    start = ToyState.realizing(s.initial_distribution, phi, s.eta, s.target)
    p0 = start.p

    base = start
    for _ in range(s.steps):
        base = baseline_step(base)

    gated, trace = start, []
    for _ in range(s.steps):
        gated, g = gated_step(gated, tau, s.alpha)
        trace.append(g)
    g_first = trace[0] if trace else toy_gate(float(p0[s.target]), tau, s.alpha)

    return ScenarioResult(
        scenario=s,
        baseline=diagnose(p0, base.p, s.target, 1.0),
        gated=diagnose(p0, gated.p, s.target, g_first),
        p_before=p0,
        p_after_baseline=base.p,
        p_after_gated=gated.p,
        gate_trace=trace,
    )


@dataclass
class StrictLooseReport:
    label: str
    loose_tau: float
    strict_tau: float
    loose: ScenarioResult
    strict: ScenarioResult

    @property
    def loose_gate(self) -> float:
        return self.loose.gated.gate_value

    @property
    def strict_gate(self) -> float:
        return self.strict.gated.gate_value


def strict_vs_loose_gate(s: ToyScenario) -> StrictLooseReport:
    return StrictLooseReport(
        label=s.label,
        loose_tau=s.tau,
        strict_tau=s.strict_tau,
        loose=run_scenario(s, tau=s.tau),
        strict=run_scenario(s, tau=s.strict_tau),
    )
