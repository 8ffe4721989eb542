"""Transient correction-vector optimization.

At a triggered step the engine asks for a vector delta that is added to the
final hidden state before the vocabulary projection. delta minimizes a hybrid
of two objectives evaluated through the same projection head:

  * context loss (l_ce): negative log-likelihood of the already-realized
    prefix tokens when the same delta is applied to every cached hidden state;
  * sharpening loss (l_aem): entropy in nats of the corrected next-token
    distribution at loss_temperature.

The blend is f_lambda = (1 - w) * l_ce + w * l_aem with w = entropy_weight,
optionally plus a quadratic penalty (reg_gamma / 2) * ||delta||^2 that only
affects the descent objective, never the reported f_lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import PrefixActivations, ProjectionHead
from .errors import InputError
from .utils import log_softmax

_EARLY_STOP = 1e-12
_MAX_HALVINGS = 20


@dataclass(frozen=True)
class AdaptiveWeightConfig:
    """Online entropy_weight adaptation: after a correction with context loss c,
    the weight is multiplied by exp(rate * (c / target - 1)) and clipped."""

    target: float
    rate: float
    min_weight: float
    max_weight: float

    def __post_init__(self):
        if not self.target > 0:
            raise InputError("adaptive target must be positive")
        if not math.isfinite(self.rate):
            raise InputError("adaptive rate must be finite")
        if not (0 < self.min_weight <= self.max_weight < 1):
            raise InputError("adaptive bounds must satisfy 0 < min <= max < 1")


@dataclass(frozen=True)
class ReflectionConfig:
    entropy_weight: float = 0.05
    steps: int = 3
    learning_rate: float = 0.01
    loss_temperature: float = 1.0
    ce_scope: str = "full-prefix"
    trust_radius: float | None = None
    reg_gamma: float = 0.0
    backtracking: bool = False
    grad_clip: float | None = 100.0
    adaptive: AdaptiveWeightConfig | None = None

    def __post_init__(self):
        if not 0.0 <= self.entropy_weight <= 1.0:
            raise InputError("entropy_weight must lie in [0, 1]")
        if self.steps < 0 or int(self.steps) != self.steps:
            raise InputError("steps must be a non-negative integer")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if not self.loss_temperature > 0:
            raise InputError("loss_temperature must be positive")
        parse_ce_scope(self.ce_scope)
        if self.trust_radius is not None and not self.trust_radius > 0:
            raise InputError("trust_radius must be positive when set")
        if self.reg_gamma < 0:
            raise InputError("reg_gamma must be non-negative")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InputError("grad_clip must be positive when set")


def parse_ce_scope(scope: str) -> tuple[str, int | None]:
    """Normalize a context-loss scope: 'full-prefix', 'generated-only', or 'last-M'."""
    if scope == "full-prefix":
        return "full", None
    if scope == "generated-only":
        return "generated", None
    if isinstance(scope, str) and scope.startswith("last-"):
        try:
            m = int(scope[5:])
        except ValueError:
            m = 0
        if m >= 1:
            return "last", m
    raise InputError(f"unknown ce_scope: {scope!r}")


def ce_positions(acts: PrefixActivations, scope: str) -> list[int]:
    """Indices i whose hidden state predicts the realized token at i+1."""
    kind, m = parse_ce_scope(scope)
    t = len(acts)
    last = t - 1  # position t-1 predicts the unseen next token: excluded
    if kind == "full":
        lo = 0
    elif kind == "generated":
        lo = max(0, acts.prompt_len - 1)
    else:
        lo = max(0, last - m)
    return list(range(lo, last))


@dataclass(frozen=True)
class HybridLossReport:
    """Loss diagnostics at one point of an optimization trajectory.

    implied_alpha is the constraint multiplier (1-w)/w equivalent to the blend
    weight (math.inf at w=0); implied_epsilon is the context-loss level l_ce,
    i.e. the fidelity budget certified if this point is the minimizer.
    step_size is the accepted step that arrived here (0.0 for the start point).
    """

    l_ce: float
    l_aem: float
    f_lambda: float
    grad_norm: float
    grad_cos: float
    implied_alpha: float
    implied_epsilon: float
    step_size: float = 0.0


@dataclass
class Correction:
    delta: np.ndarray
    trajectory: list[HybridLossReport] = field(default_factory=list)
    steps_taken: int = 0
    aborted: bool = False


def _base_logits(acts, head, positions):
    if not positions:
        return None, None
    hs = np.stack([acts.hidden[i] for i in positions])
    targets = np.array([acts.tokens[i + 1] for i in positions])
    return hs @ head.matrix.T, targets


def loss_ce(acts: PrefixActivations, head: ProjectionHead, delta,
            scope: str = "full-prefix") -> float:
    """Negative log-likelihood of the realized prefix under the shifted head.

    The same delta is applied to every in-scope cached hidden state. A
    single-token prefix has an empty scope and scores 0.
    """
    positions = ce_positions(acts, scope)
    if not positions:
        return 0.0
    base, targets = _base_logits(acts, head, positions)
    z = base + head.matrix @ np.asarray(delta, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        return float("nan")
    lse = np.log(np.exp(z - m).sum(axis=1)) + m[:, 0]
    picked = z[np.arange(len(positions)), targets]
    return float(np.sum(lse - picked))


def loss_aem(acts: PrefixActivations, head: ProjectionHead, delta,
             loss_temperature: float = 1.0) -> float:
    """Entropy in nats of the corrected next-token distribution at loss_temperature."""
    if not loss_temperature > 0:
        raise InputError("loss_temperature must be positive")
    z = head.matrix @ (acts.last_hidden + np.asarray(delta, dtype=np.float64))
    ls = log_softmax(z, loss_temperature)
    if np.isnan(ls).any():
        return float("nan")
    p = np.exp(ls)
    return float(-np.sum(np.where(p > 0.0, p * ls, 0.0)))


def loss_gradients(acts: PrefixActivations, head: ProjectionHead, delta,
                   ce_scope: str = "full-prefix", loss_temperature: float = 1.0):
    """(grad of context loss, grad of sharpening loss) at delta, closed form."""
    _, g_ce, _, g_aem = _grad_parts(
        acts, head, delta,
        ReflectionConfig(ce_scope=ce_scope, loss_temperature=loss_temperature))
    return g_ce, g_aem


def _grad_parts(acts, head, delta, config):
    """Analytic gradients of both losses plus their values, one pass."""
    w = head.matrix
    delta = np.asarray(delta, dtype=np.float64)
    positions = ce_positions(acts, config.ce_scope)

    if positions:
        base, targets = _base_logits(acts, head, positions)
        with np.errstate(invalid="ignore"):
            z = base + w @ delta
        m = z.max(axis=1, keepdims=True)
        shifted = z - m
        expz = np.exp(shifted)
        denom = expz.sum(axis=1, keepdims=True)
        probs = expz / denom
        lse = np.log(denom[:, 0]) + m[:, 0]
        l_ce = float(np.sum(lse - z[np.arange(len(positions)), targets]))
        resid = probs.copy()
        resid[np.arange(len(positions)), targets] -= 1.0
        g_ce = w.T @ resid.sum(axis=0)
    else:
        l_ce = 0.0
        g_ce = np.zeros(head.hidden_dim)

    tau = config.loss_temperature
    with np.errstate(invalid="ignore"):
        ls = log_softmax(w @ (acts.last_hidden + delta), tau)
    if np.isnan(ls).any():
        # degenerate scaled logits: surface NaN so abort checks can fire
        return l_ce, g_ce, float("nan"), np.full(head.hidden_dim, np.nan)
    q = np.exp(ls)
    h = float(-np.sum(np.where(q > 0.0, q * ls, 0.0)))
    gvec = np.where(q > 0.0, -q * (ls + h), 0.0)
    g_aem = (w.T @ gvec) / tau
    return l_ce, g_ce, h, g_aem


def grad_hybrid(acts: PrefixActivations, head: ProjectionHead, delta,
                config: ReflectionConfig) -> tuple[np.ndarray, HybridLossReport]:
    """Exact gradient of the descent objective (blend + quadratic penalty) at delta,
    with a full loss report. Gradient clipping is an optimize_delta concern, not
    applied here, so finite-difference checks see the analytic gradient."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (head.hidden_dim,):
        raise InputError(f"delta must have shape ({head.hidden_dim},)")
    w = config.entropy_weight
    l_ce, g_ce, l_aem, g_aem = _grad_parts(acts, head, delta, config)
    grad = (1.0 - w) * g_ce + w * g_aem
    if config.reg_gamma:
        grad = grad + config.reg_gamma * delta
    n_ce = float(np.linalg.norm(g_ce))
    n_aem = float(np.linalg.norm(g_aem))
    cos = float(g_ce @ g_aem / (n_ce * n_aem)) if n_ce > 0 and n_aem > 0 else 0.0
    report = HybridLossReport(
        l_ce=l_ce, l_aem=l_aem, f_lambda=(1.0 - w) * l_ce + w * l_aem,
        grad_norm=float(np.linalg.norm(grad)), grad_cos=cos,
        implied_alpha=(1.0 - w) / w if w > 0 else math.inf,
        implied_epsilon=l_ce)
    return grad, report


def _objective(report: HybridLossReport, delta, config) -> float:
    obj = report.f_lambda
    if config.reg_gamma:
        obj += 0.5 * config.reg_gamma * float(delta @ delta)
    return obj


def _project(delta, config):
    if config.trust_radius is None:
        return delta
    n = float(np.linalg.norm(delta))
    if n > config.trust_radius:
        return delta * (config.trust_radius / n)
    return delta


def _losses_only(acts, head, delta, config):
    c = loss_ce(acts, head, delta, config.ce_scope)
    a = loss_aem(acts, head, delta, config.loss_temperature)
    w = config.entropy_weight
    return (1.0 - w) * c + w * a


def optimize_delta(acts: PrefixActivations, head: ProjectionHead,
                   config: ReflectionConfig) -> Correction:
    """Run the inner reflection loop from delta = 0.

    Plain mode takes exactly `steps` gradient steps at learning_rate. With
    backtracking the step is halved (at most 20 times) until the objective does
    not increase, and the loop stops early once the decrease falls to 1e-12.
    The direction is norm-clipped at grad_clip; delta is projected back onto
    the trust-region ball after every update. Any non-finite loss aborts the
    whole correction: the caller gets delta = 0 and an abort flag, and decoding
    proceeds uncorrected.
    """
    dim = head.hidden_dim
    delta = np.zeros(dim)
    trajectory: list[HybridLossReport] = []

    def aborted():
        return Correction(np.zeros(dim), trajectory,
                          steps_taken=max(0, len(trajectory) - 1), aborted=True)

    grad, report = grad_hybrid(acts, head, delta, config)
    trajectory.append(report)
    if not (math.isfinite(report.l_ce) and math.isfinite(report.l_aem)
            and np.all(np.isfinite(grad))):
        return aborted()

    for _ in range(config.steps):
        direction = grad
        n = float(np.linalg.norm(direction))
        if config.grad_clip is not None and n > config.grad_clip:
            direction = direction * (config.grad_clip / n)

        if config.backtracking:
            current = _objective(report, delta, config)
            step = config.learning_rate
            candidate = None
            for _ in range(_MAX_HALVINGS + 1):
                trial = _project(delta - step * direction, config)
                trial_obj = _losses_only(acts, head, trial, config)
                if config.reg_gamma:
                    trial_obj += 0.5 * config.reg_gamma * float(trial @ trial)
                if not math.isfinite(trial_obj):
                    return aborted()
                if trial_obj <= current:
                    candidate = (trial, step, trial_obj)
                    break
                step *= 0.5
            if candidate is None:
                break  # no non-increasing step inside the budget: stay put
            delta, step, new_obj = candidate
            grad, report = grad_hybrid(acts, head, delta, config)
            trajectory.append(replace(report, step_size=step))
            if not (math.isfinite(report.l_ce) and math.isfinite(report.l_aem)
                    and np.all(np.isfinite(grad))):
                return aborted()
            if current - new_obj <= _EARLY_STOP:
                break
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                delta = _project(delta - config.learning_rate * direction, config)
            grad, report = grad_hybrid(acts, head, delta, config)
            trajectory.append(replace(report, step_size=config.learning_rate))
            if not (math.isfinite(report.l_ce) and math.isfinite(report.l_aem)
                    and np.all(np.isfinite(grad))):
                return aborted()

    return Correction(delta, trajectory, steps_taken=len(trajectory) - 1, aborted=False)


def adapt_lambda(config: ReflectionConfig, observed_l_ce: float) -> float:
    """Next entropy_weight after observing a correction's context loss."""
    if config.adaptive is None:
        raise InputError("adaptive weight update requested without adaptive config")
    if not (math.isfinite(observed_l_ce) and observed_l_ce >= 0):
        raise InputError("observed context loss must be finite and non-negative")
    a = config.adaptive
    w = config.entropy_weight * math.exp(a.rate * (observed_l_ce / a.target - 1.0))
    return min(a.max_weight, max(a.min_weight, w))
