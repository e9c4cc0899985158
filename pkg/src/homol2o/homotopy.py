"""Continuation transforms and the lambda schedule for staged training.

A :class:`HomotopyState` fixes the continuation parameter ``lam`` in
[0, 1] plus the constants of the active transforms. The generic
(relaxation) transforms are:

* ``cobj``  — blend a convex surrogate objective into the true one,
* ``sbnds`` — interpolate variable bounds from a loose box to the real ones,
* ``gpen``  — scale inequality residuals by ``lam`` before the hinge,
* ``sas``   — replace each equality by a pair of band inequalities whose
              half-width shrinks from ``eps_h`` to ``eps_l``.

Domain transforms (``load_step``, ``tx_step``) are implemented by the
problem family itself; the state only carries their constants. Composition
order is fixed: domain hooks rewrite the equalities, ``sas`` splits the
rewritten equalities, ``sbnds`` rewrites bound inequalities, ``gpen``
scales every inequality (splits and bounds included), ``cobj`` blends the
objective. At ``lam = 1`` every transform is the identity.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

GENERIC_TRANSFORMS = ("cobj", "sbnds", "gpen", "sas")
DOMAIN_TRANSFORMS = ("load_step", "tx_step")
ALL_TRANSFORMS = GENERIC_TRANSFORMS + DOMAIN_TRANSFORMS


@dataclass(frozen=True)
class HomotopyState:
    """Continuation position plus transform constants for one stage."""

    lam: float
    delta_lambda: float = 0.05
    step_index: int = 0
    transforms: frozenset = field(default_factory=frozenset)
    eps_h: float = 0.01
    eps_l: float = 0.0
    eps_minus: float = 0.0
    eps_plus: float = 1.0
    delta_short: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if not 0.0 < self.delta_lambda <= 1.0:
            raise ConfigError(f"delta_lambda must be in (0,1], got {self.delta_lambda}")
        if not self.eps_h >= self.eps_l >= 0.0:
            raise ConfigError(f"need eps_h >= eps_l >= 0, got {self.eps_h}, {self.eps_l}")
        if self.delta_short <= 0.0:
            raise ConfigError(f"delta_short must be positive, got {self.delta_short}")
        unknown = set(self.transforms) - set(ALL_TRANSFORMS)
        if unknown:
            raise ConfigError(
                f"unknown transforms {sorted(unknown)}; valid: {list(ALL_TRANSFORMS)}")
        object.__setattr__(self, "transforms", frozenset(self.transforms))

    def has(self, name):
        return name in self.transforms


def cobj_blend(f_cvx, f_obj, lam):
    """(1-lam) * convex surrogate + lam * true objective (exact endpoints)."""
    if lam == 0.0:
        return f_cvx
    if lam == 1.0:
        return f_obj
    return ad.add(ad.mul(1.0 - lam, f_cvx), ad.mul(lam, f_obj))


def sbnds_bounds(lower, upper, eps_minus, eps_plus, lam):
    """Interpolated bounds (1-lam)*eps + lam*bound, elementwise."""
    if eps_minus > eps_plus:
        raise ConfigError(f"need eps_minus <= eps_plus, got {eps_minus} > {eps_plus}")
    if lam == 1.0:
        return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    lo = (1.0 - lam) * eps_minus + lam * np.asarray(lower, dtype=float)
    hi = (1.0 - lam) * eps_plus + lam * np.asarray(upper, dtype=float)
    return lo, hi


def gpen_scale(g, lam):
    """Scale inequality residuals by lam; hinge(lam*g) == lam*hinge(g)."""
    if lam == 1.0:
        return g
    return ad.mul(lam, g)


def sas_epsilon(eps_h, eps_l, lam):
    """Band half-width (1-lam)*eps_h + lam*eps_l."""
    if lam == 1.0:
        return eps_l
    return (1.0 - lam) * eps_h + lam * eps_l


def sas_split(h, eps):
    """Equality band as two hinge-ready inequalities: h-eps <= 0, -h-eps <= 0."""
    return ad.concat_cols([ad.sub(h, eps), ad.sub(ad.neg(h), eps)])


def schedule_lambdas(delta_lambda):
    """Stage values 0, d, 2d, ..., 1 with the last stage clamped to exactly 1."""
    if not 0.0 < delta_lambda <= 1.0:
        raise ConfigError(f"delta_lambda must be in (0,1], got {delta_lambda}")
    lams = []
    k = 0
    while True:
        lam = k * delta_lambda
        if lam >= 1.0 - 1e-12:
            lams.append(1.0)
            break
        lams.append(lam)
        k += 1
    return lams


def schedule_advance(state):
    """Next stage with lam advanced by delta (clamped to 1), or None when done."""
    if state.lam >= 1.0:
        return None
    nxt = min(1.0, state.lam + state.delta_lambda)
    if nxt >= 1.0 - 1e-12:
        nxt = 1.0
    return replace(state, lam=nxt, step_index=state.step_index + 1)


class TransformedProblem:
    """A problem seen through the transforms of one homotopy stage.

    ``equality_residuals`` returns the domain-rewritten equalities (never
    SaS-split) so metrics and endpoint checks can always compare them
    directly; ``sas_active`` tells the loss assembler to route them through
    the inequality hinge instead of the squared penalty.
    ``inequality_residuals`` stacks [native g | h-eps | -h-eps], already
    gpen-scaled; the native block occupies the first ``num_native_ineq``
    columns.
    """

    def __init__(self, problem, state):
        self.problem = problem
        self.state = state
        if state is not None:
            _validate_transform_set(problem, state)

    @property
    def lam(self):
        return 1.0 if self.state is None else self.state.lam

    @property
    def sas_active(self):
        return self.state is not None and self.state.has("sas") \
            and self.problem.num_eq > 0

    @property
    def num_native_ineq(self):
        return self.problem.num_ineq

    def objective(self, x, xi):
        f = self.problem.objective(x, xi)
        if self.state is not None and self.state.has("cobj"):
            f_cvx = self.problem.convex_objective(x, xi)
            f = cobj_blend(f_cvx, f, self.state.lam)
        return f

    def equality_residuals(self, x, xi):
        return self.problem.equality_residuals(x, xi, self.state)

    def inequality_residuals(self, x, xi):
        parts = []
        g = self.problem.inequality_residuals(x, xi, self.state)
        if g is not None:
            parts.append(g)
        if self.sas_active:
            h = self.problem.equality_residuals(x, xi, self.state)
            eps = sas_epsilon(self.state.eps_h, self.state.eps_l, self.state.lam)
            parts.append(sas_split(h, eps))
        if not parts:
            return None
        stacked = parts[0] if len(parts) == 1 else ad.concat_cols(parts)
        if self.state is not None and self.state.has("gpen"):
            stacked = gpen_scale(stacked, self.state.lam)
        return stacked

    def extra_penalties(self, x, xi, weights):
        return self.problem.extra_penalties(x, xi, self.state, weights)


def apply_transforms(problem, state):
    """Wrap ``problem`` in the transform set of ``state`` (None = identity)."""
    return TransformedProblem(problem, state)


def _validate_transform_set(problem, state):
    if state.has("cobj") and not getattr(problem, "supports_cobj", False):
        raise ConfigError("cobj transform needs a problem with a convex surrogate objective")
    if state.has("sbnds") and not getattr(problem, "has_bounds", False):
        raise ConfigError("sbnds transform needs a problem with declared variable bounds")
    supported = getattr(problem, "domain_transforms", frozenset())
    for name in DOMAIN_TRANSFORMS:
        if state.has(name) and name not in supported:
            raise ConfigError(f"problem family does not implement the {name} transform")
    if state.has("load_step") and state.has("tx_step"):
        raise ConfigError("load_step and tx_step rewrite the same equalities; pick one")
