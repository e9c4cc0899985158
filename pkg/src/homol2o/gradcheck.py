"""Finite-difference verification of policy gradients through problem losses.

Central differences with step h on every network parameter, compared to
the reverse-mode gradients of the penalty loss. Parameter entries whose
perturbation flips any relu/abs/max activation pattern (a kink crossing)
are excluded from the comparison, as are entries sitting exactly on a
kink at the base point.
"""

import numpy as np

from . import autodiff as ad
from .problem import PenaltyWeights, assemble_penalty_loss


def grad_check(net, problem, tolerance, xi=None, weights=None, state=None,
               step=1e-5, batch=4, rng=None):
    """Compare every parameter gradient against central differences.

    Returns a report dict with ``max_rel_err``, ``passed``, counts of
    checked/excluded entries, and the per-parameter error arrays.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if xi is None:
        xi = problem.sample_parameters(batch, rng)
    xi = np.asarray(xi, dtype=float)
    if weights is None:
        weights = PenaltyWeights(w_eq=50.0, w_ineq=50.0)

    def loss_fn():
        return assemble_penalty_loss(problem, net.forward(xi), xi, weights, state)

    report = ad.check_gradients(net.parameters(), loss_fn, step=step)
    report["passed"] = report["max_rel_err"] <= tolerance
    report["tolerance"] = tolerance
    return report
