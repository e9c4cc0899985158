"""Parametric-NLP abstraction, penalty loss, and violation metrics.

A problem family exposes differentiable evaluators for the objective f,
equality residuals h (= 0 feasible) and inequality residuals g (<= 0
feasible), all batched: decision tensors are (batch, dim_x), parameter
arrays (batch, dim_xi). The training loss is the mean over the batch of

    f + w_eq * sum_i h_i^2 + w_ineq * sum_i relu(g_i) + extra terms,

with equalities squared and inequalities hinged. Evaluation metrics are
always computed against the original (lam = 1) problem regardless of how
training was staged.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, NonFiniteError
from .homotopy import apply_transforms


@dataclass(frozen=True)
class PenaltyWeights:
    """Nonnegative penalty weights for the self-supervised loss."""

    w_eq: float
    w_ineq: float
    w_pullup: float = 1e6
    w_warm: float = 1e6
    squared_hinge: bool = False  # ablation only; default follows the plain hinge

    def __post_init__(self):
        for name in ("w_eq", "w_ineq", "w_pullup", "w_warm"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


class ParametricProblem:
    """Interface shared by all problem families.

    Subclasses set ``dim_x``, ``dim_xi``, ``num_eq``, ``num_ineq``, and the
    capability flags, and implement the evaluators below. Evaluators must
    be pure and built from the autodiff op set so gradients flow through
    the policy.
    """

    dim_x = 0
    dim_xi = 0
    num_eq = 0
    num_ineq = 0
    has_bounds = False
    supports_cobj = False
    domain_transforms = frozenset()

    def objective(self, x, xi):
        raise NotImplementedError

    def convex_objective(self, x, xi):
        raise ConfigError(f"{type(self).__name__} has no convex surrogate objective")

    def equality_residuals(self, x, xi, state=None):
        return None

    def inequality_residuals(self, x, xi, state=None):
        return None

    def extra_penalties(self, x, xi, state, weights):
        return None

    def sample_parameters(self, count, rng):
        raise NotImplementedError

    def fingerprint(self):
        raise NotImplementedError

    def check_batch(self, x, xi):
        if x.value.shape[1] != self.dim_x:
            raise DimensionError(f"decision dim {x.value.shape[1]}, expected {self.dim_x}")
        if xi.shape[1] != self.dim_xi:
            raise DimensionError(f"parameter dim {xi.shape[1]}, expected {self.dim_xi}")
        if x.value.shape[0] != xi.shape[0]:
            raise DimensionError(
                f"batch mismatch: {x.value.shape[0]} decisions vs {xi.shape[0]} parameters")


def assemble_penalty_loss(problem, x, xi, weights, state=None):
    """Batched penalty loss as a scalar graph node.

    ``x`` is the decision Tensor (typically the policy output), ``xi`` the
    matching parameter array. ``state`` selects the homotopy stage; None
    trains the original problem.
    """
    xi = np.asarray(xi, dtype=np.float64)
    problem.check_batch(x, xi)
    tp = apply_transforms(problem, state)

    terms = tp.objective(x, xi)
    h = tp.equality_residuals(x, xi)
    if h is not None and not tp.sas_active:
        terms = ad.add(terms, ad.mul(weights.w_eq, ad.square_row_sum(h)))
    g = tp.inequality_residuals(x, xi)
    if g is not None:
        if weights.squared_hinge:
            pen = ad.square_row_sum(ad.relu(g))
        else:
            pen = ad.hinge_row_sum(g)
        terms = ad.add(terms, ad.mul(weights.w_ineq, pen))
    extra = tp.extra_penalties(x, xi, weights)
    if extra is not None:
        terms = ad.add(terms, extra)

    loss = ad.mean_all(terms)
    if not np.isfinite(loss.value[0, 0]):
        raise NonFiniteError(_describe_nonfinite(h, g, terms))
    return loss


def _describe_nonfinite(h, g, terms):
    for label, t in (("equality", h), ("inequality", g)):
        if t is None:
            continue
        bad = np.argwhere(~np.isfinite(t.value))
        if bad.size:
            row, col = bad[0]
            return f"non-finite loss: {label} residual index {col} (batch row {row})"
    return "non-finite loss: objective or extra penalty term"


def eval_constraints(problem, x, xi, state=None):
    """Raw (f, h, g) values at the requested homotopy stage.

    With ``state=None`` this is the original problem. ``x`` may be a plain
    array; the g vector includes SaS split residuals and gpen scaling when
    those transforms are active, with the native inequalities first.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    problem.check_batch(x, xi)
    tp = apply_transforms(problem, state)
    f = tp.objective(x, xi).value[:, 0]
    h = tp.equality_residuals(x, xi)
    g = tp.inequality_residuals(x, xi)
    return f, None if h is None else h.value, None if g is None else g.value


@dataclass
class ViolationStats:
    """Per-instance feasibility metrics plus cross-instance aggregates.

    Violations use |h| for equalities and relu(g) for inequalities; each
    per-instance value averages (or maximizes) over constraint entries.
    Aggregates are (mean, population std) across instances.
    """

    objective: np.ndarray
    mean_eq: np.ndarray
    max_eq: np.ndarray
    mean_ineq: np.ndarray
    max_ineq: np.ndarray

    FIELDS = ("objective", "mean_eq", "max_eq", "mean_ineq", "max_ineq")

    def aggregate(self, name):
        vals = getattr(self, name)
        return float(np.mean(vals)), float(np.std(vals))

    def aggregates(self):
        return {name: self.aggregate(name) for name in self.FIELDS}

    @property
    def n_instances(self):
        return len(self.objective)


def violation_metrics(problem, policy, test_xi):
    """Score a policy on held-out instances against the original problem.

    The homotopy trajectory used in training is irrelevant here: residuals
    are always the lam = 1 (untransformed) ones.
    """
    test_xi = np.asarray(test_xi, dtype=np.float64)
    if test_xi.shape[0] == 0:
        raise ConfigError("violation_metrics needs a nonempty test set")
    x_hat = policy.predict(test_xi)
    f, h, g = eval_constraints(problem, x_hat, test_xi, state=None)
    n = test_xi.shape[0]
    if h is not None and h.shape[1] > 0:
        habs = np.abs(h)
        mean_eq, max_eq = habs.mean(axis=1), habs.max(axis=1)
    else:
        mean_eq = max_eq = np.zeros(n)
    if g is not None and g.shape[1] > 0:
        gpos = np.maximum(g, 0.0)
        mean_ineq, max_ineq = gpos.mean(axis=1), gpos.max(axis=1)
    else:
        mean_ineq = max_ineq = np.zeros(n)
    return ViolationStats(f, mean_eq, max_eq, mean_ineq, max_ineq)
