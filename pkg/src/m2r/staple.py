"""Binary STAPLE: EM estimate of a consensus mask and per-rater performance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, GridSpec, ValidationError

log = logging.getLogger(__name__)

EPS = 1e-7
INIT_RATE = 0.9999


@dataclass(frozen=True)
class RaterStack:
    grid: GridSpec
    decisions: tuple  # of BinaryMask

    def __post_init__(self):
        decisions = tuple(self.decisions)
        if not decisions:
            raise ValidationError("STAPLE needs at least one rater")
        for k, m in enumerate(decisions):
            if m.grid.dims != self.grid.dims:
                raise ValidationError(f"rater {k} grid {m.grid.dims} differs from {self.grid.dims}")
        object.__setattr__(self, "decisions", decisions)

    @classmethod
    def from_masks(cls, masks) -> "RaterStack":
        masks = list(masks)
        if not masks:
            raise ValidationError("STAPLE needs at least one rater")
        return cls(masks[0].grid, tuple(masks))

    def matrix(self) -> np.ndarray:
        """``(N, J)`` boolean decisions, x-fastest node order."""
        return np.stack([m.flat for m in self.decisions], axis=1)


@dataclass
class StapleResult:
    weights: np.ndarray  # posterior foreground probability, shape dims
    sensitivity: np.ndarray
    specificity: np.ndarray
    gt_mask: BinaryMask
    iterations: int
    converged: bool
    prior: float
    log_likelihood: list = field(default_factory=list)


def _clamp(v):
    return np.clip(v, EPS, 1.0 - EPS)


def staple_estimate(stack: RaterStack, prior="auto", max_iters: int = 100,
                    tol: float = 1e-8) -> StapleResult:
    """Expectation-maximisation for the binary STAPLE model.

    E-step in the log domain, M-step closed form; stops when
    ``max_j |dp_j| + |dq_j| < tol``.  ``log_likelihood`` records
    ``sum_i log(a_i + b_i)`` for the parameters entering each E-step.
    """
    for k, m in enumerate(stack.decisions):
        if not m.is_mixed():
            raise ValidationError(f"rater {k} mask is not mixed (all one label)")
    D = stack.matrix()
    Df = D.astype(float)
    J = D.shape[1]
    if prior == "auto":
        pi = float(Df.mean())
    else:
        pi = float(prior)
        if not 0.0 < pi < 1.0:
            raise ValidationError(f"prior must lie in (0, 1), got {prior}")
    pi = float(_clamp(pi))
    p = _clamp(np.full(J, INIT_RATE))
    q = _clamp(np.full(J, INIT_RATE))
    ll = []
    converged = False
    it = 0
    W = None
    for it in range(1, max_iters + 1):
        log_a = np.log(pi) + Df @ np.log(p) + (1.0 - Df) @ np.log1p(-p)
        log_b = np.log1p(-pi) + Df @ np.log1p(-q) + (1.0 - Df) @ np.log(q)
        top = np.maximum(log_a, log_b)
        log_norm = top + np.log(np.exp(log_a - top) + np.exp(log_b - top))
        ll.append(float(log_norm.sum()))
        W = np.exp(log_a - log_norm)
        sw = W.sum()
        sb = (1.0 - W).sum()
        p_new = _clamp((W @ Df) / sw) if sw > 0 else p
        q_new = _clamp(((1.0 - W) @ (1.0 - Df)) / sb) if sb > 0 else q
        change = float(np.max(np.abs(p_new - p) + np.abs(q_new - q)))
        p, q = p_new, q_new
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("STAPLE did not converge in %d iterations", max_iters)
    grid = stack.grid
    Wg = W.reshape(grid.dims, order="F")
    return StapleResult(weights=Wg, sensitivity=p, specificity=q,
                        gt_mask=BinaryMask(grid, Wg >= 0.5), iterations=it,
                        converged=converged, prior=pi, log_likelihood=ll)
