"""Training losses for the distance network.

All integrals are Monte Carlo means over a batch.  Functions take a field
bound to a tape (see ``NeuralField.bind``) and return taped scalars.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .field import NeuralField


@dataclass(frozen=True)
class LossWeights:
    lambda_gm: float = 0.06
    lambda_sp: float = 0.01
    lambda_ma: float = 0.08
    delta_eps: float = 0.03

    def __post_init__(self):
        if min(self.lambda_gm, self.lambda_sp, self.lambda_ma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.delta_eps <= 0:
            raise ValueError("delta_eps must be positive")


@dataclass
class LossBreakdown:
    manifold: float
    gradient_matching: float
    shortest_path: float
    minimal_area: float
    total: float
    eikonal: float = float("nan")
    surface_batch: int = 0
    domain_batch: int = 0
    pulled_outside: int = 0

    def as_dict(self):
        return asdict(self)


def _check_batch(batch):
    x = np.asarray(ad.value_of(batch))
    if x.ndim != 2 or x.shape[1] != 3 or len(x) == 0:
        raise ValueError("loss batches must be non-empty (n, 3) arrays")
    return batch


def manifold_loss(field, surface_batch):
    """Mean distance on points sampled from the surface."""
    _check_batch(surface_batch)
    d = field.evaluate(surface_batch).d
    return ad.mean(ad.absolute(d))


def _gradient_matching(ev):
    return ad.mean(ad.reduce_sum(ad.square(ev.grad_d - ev.G), axis=-1))


def gradient_matching_loss(field, domain_batch):
    """Mean squared mismatch between the input gradient of ``d`` and ``G``."""
    _check_batch(domain_batch)
    return _gradient_matching(field.evaluate(domain_batch, derivatives=True))


def pulled_distance(field, x, F, detach_outer=True):
    """Distances at the pulled points ``x - F``.

    With ``detach_outer`` the outer network evaluation is frozen: its value
    counts but only the pulled point itself (through ``F``) carries
    parameter sensitivity.
    """
    return field.evaluate(x - F, detach=detach_outer).d


def shortest_path_from(field, x, F, detach_outer=True):
    return ad.mean(ad.square(pulled_distance(field, x, F, detach_outer)))


def shortest_path_loss(field, domain_batch, detach_outer=True):
    """Mean squared distance at points pulled by the field's own shortest-path vector."""
    _check_batch(domain_batch)
    F = field.evaluate(domain_batch).F
    return shortest_path_from(field, domain_batch, F, detach_outer)


def smeared_delta(d, eps):
    return 1.0 - ad.square(ad.tanh(d / float(eps)))


def minimal_area_loss(field, domain_batch, delta_eps=0.03):
    """Mean of ``1 - tanh^2(d / eps)``, a smoothed area of the zero level set."""
    if delta_eps <= 0:
        raise ValueError("delta_eps must be positive")
    _check_batch(domain_batch)
    return ad.mean(smeared_delta(field.evaluate(domain_batch).d, delta_eps))


def eikonal_residual_diagnostic(field, domain_batch):
    """Mean ``| |grad d| - 1 |`` over the batch.  Reported, never trained on."""
    _check_batch(domain_batch)
    if isinstance(field, NeuralField):
        grad_d = field.evaluate(np.asarray(domain_batch)).grad_d
    else:
        bound = field.bind(ad.Tape()) if hasattr(field, "bind") else field
        grad_d = ad.value_of(bound.evaluate(domain_batch, derivatives=True).grad_d)
    return float(np.mean(np.abs(np.linalg.norm(grad_d, axis=-1) - 1.0)))


def _scalar(v):
    return float(np.asarray(ad.value_of(v)).reshape(()))


def total_loss(field, surface_batch, domain_batch, weights=LossWeights(), detach_outer=True):
    """Weighted sum of the four terms; returns ``(taped scalar, LossBreakdown)``.

    The manifold term uses ``surface_batch``; the others share one evaluation
    of the field on ``domain_batch``.
    """
    _check_batch(surface_batch)
    _check_batch(domain_batch)
    manifold = manifold_loss(field, surface_batch)
    ev = field.evaluate(domain_batch, derivatives=True)
    gm = _gradient_matching(ev)
    y = ad.value_of(domain_batch) - ad.value_of(ev.F)
    sp = shortest_path_from(field, domain_batch, ev.F, detach_outer)
    ma = ad.mean(smeared_delta(ev.d, weights.delta_eps))

    total = manifold
    for lam, term in ((weights.lambda_gm, gm), (weights.lambda_sp, sp), (weights.lambda_ma, ma)):
        if lam:
            total = total + lam * term
    if not isinstance(total, ad.Var):
        total = field.tape.constant(total)

    values = [_scalar(v) for v in (manifold, gm, sp, ma)]
    grad_norm = np.linalg.norm(ad.value_of(ev.grad_d), axis=-1)
    breakdown = LossBreakdown(
        manifold=values[0],
        gradient_matching=values[1],
        shortest_path=values[2],
        minimal_area=values[3],
        total=_scalar(total),
        eikonal=float(np.mean(np.abs(grad_norm - 1.0))),
        surface_batch=len(ad.value_of(surface_batch)),
        domain_batch=len(ad.value_of(domain_batch)),
        pulled_outside=int(np.sum(np.any(np.abs(y) > 1.0, axis=1))),
    )
    return total, breakdown
