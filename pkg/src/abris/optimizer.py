"""Stochastic ascent on the ELBO.

One update runs the stages in a fixed order::

    raw gradient -> weight regularization (mixtures) -> damped natural
    gradient (mean-field) -> norm clipping -> Adam -> lam + delta

Each stage is a plain function so it can be tested on its own.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from abris.errors import InputError, NumericalError, UnsupportedFamilyError
from abris.variational import GaussianMixture, MeanFieldGaussian


@dataclass(frozen=True)
class DampingSchedule:
    """Exponentially decaying Fisher-matrix damping.

    Constant ``eta_tilde`` before iteration ``i_b``, then decays with
    e-folding time ``i_b`` down to ``eta_bound``.
    """

    eta_tilde: float = 1e-2
    i_b: int = 50
    eta_bound: float = 1e-6

    def __post_init__(self):
        if not (self.eta_tilde >= self.eta_bound > 0.0) or self.i_b < 1:
            raise InputError("damping schedule needs eta_tilde >= eta_bound > 0 and i_b >= 1")


def damping(i, sched):
    if i < sched.i_b:
        return sched.eta_tilde
    return max(sched.eta_tilde * math.exp(-(i - sched.i_b) / sched.i_b), sched.eta_bound)


def precondition(grad, q, i, sched):
    """Solve ``(F(lam) + eta_i I) x = grad`` for mean-field ``q``.

    Other families pass the gradient through unchanged.
    """
    grad = np.asarray(grad, dtype=float)
    if not isinstance(q.family, MeanFieldGaussian):
        return grad
    diag = q.family.fisher_information(q.lam) + damping(i, sched)
    if np.any(~(diag > 0.0)):
        raise NumericalError("damped Fisher diagonal is not positive")
    return grad / diag


def clip(grad, threshold):
    """Rescale ``grad`` to L2 norm ``threshold`` if it is longer."""
    if not threshold > 0:
        raise InputError("clipping threshold must be positive")
    grad = np.asarray(grad, dtype=float)
    norm = np.linalg.norm(grad)
    if norm > threshold:
        return grad * (threshold / norm)
    return grad


def lr_schedule(i, base_lr, rule="constant", factor=0.9, interval=1000):
    """Learning rate at iteration ``i``.

    ``rule`` is ``"constant"`` or ``"step"`` (multiply by ``factor`` every
    ``interval`` iterations).
    """
    if rule == "constant":
        return base_lr
    if rule == "step":
        return base_lr * factor ** (i // interval)
    raise InputError(f"unknown learning-rate rule {rule!r}")


@dataclass
class AdamState:
    """Moment accumulators of Adam."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, **kwargs):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kwargs)


def adam_step(state, grad, lr=None):
    """One Adam step in ascent convention.

    Args:
        state (AdamState): Updated in place.
        grad (np.ndarray): Ascent direction.
        lr (float, optional): Overrides ``state.lr`` for this step.

    Returns:
        (state, delta) with ``lam_new = lam + delta``.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise InputError(f"gradient shape {grad.shape} does not match state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient passed to Adam")
    lr = state.lr if lr is None else lr
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return state, lr * m_hat / (np.sqrt(v_hat) + state.eps)


def regularized_gradient(grad, q, alpha_reg=None):
    """Add the gradient of ``-alpha_reg * |logits|^2`` to the logit block.

    ``alpha_reg`` defaults to ``4 K``.
    """
    if not isinstance(q.family, GaussianMixture):
        raise UnsupportedFamilyError("weight regularization applies to Gaussian mixtures only")
    k = q.family.n_components
    if alpha_reg is None:
        alpha_reg = 4.0 * k
    out = np.array(grad, dtype=float)
    out[:k] -= 2.0 * alpha_reg * q.lam[:k]
    return out


@dataclass
class StochasticOptimizer:
    """The full update pipeline.

    Attributes:
        learning_rate (float): Base Adam learning rate.
        lr_rule (str): ``"constant"`` or ``"step"``.
        lr_factor (float): Decay factor for the step rule.
        lr_interval (int): Decay interval for the step rule.
        natural_gradient (bool): Precondition mean-field gradients with the damped FIM.
        damping (DampingSchedule): FIM damping schedule.
        clip_threshold (float): L2 clipping threshold.
        alpha_reg (float or None): Mixture-weight regularization, ``None`` for ``4 K``.
    """

    learning_rate: float = 1e-2
    lr_rule: str = "constant"
    lr_factor: float = 0.9
    lr_interval: int = 1000
    natural_gradient: bool = True
    damping: DampingSchedule = field(default_factory=DampingSchedule)
    clip_threshold: float = 1e6
    alpha_reg: float = None
    state: AdamState = None

    def reset(self, n):
        self.state = AdamState.zeros(n, lr=self.learning_rate)

    def direction(self, q, grad, i):
        """Gradient after regularization, preconditioning and clipping."""
        g = np.asarray(grad, dtype=float)
        if isinstance(q.family, GaussianMixture):
            g = regularized_gradient(g, q, self.alpha_reg)
        if self.natural_gradient:
            g = precondition(g, q, i, self.damping)
        return clip(g, self.clip_threshold)

    def step(self, q, grad, i):
        """Return ``q`` with updated parameters."""
        if self.state is None or self.state.m.size != q.lam.size:
            self.reset(q.lam.size)
        lr = lr_schedule(i, self.learning_rate, self.lr_rule, self.lr_factor, self.lr_interval)
        _, delta = adam_step(self.state, self.direction(q, grad, i), lr)
        return q.with_params(q.lam + delta)
