"""Nonconvex benchmark: chained-quadratic objective with random linear
inequality constraints.

    min_x  sum_{i=1}^{n-1} (1 - x_i)^2 + 2 (x_{i+1} - x_i^2)^2
    s.t.   A x <= b + C xi,   x in [-2, 2]^n

A and C are seeded standard-normal draws; b_i = margin + sum_j |C_ij| so
that x = 0 is strictly feasible (slack >= margin) for every xi in
[-1, 1]^dim_xi. The box bound matches the brute-force oracle's search
region and gives the bound-shrinking transform something to act on. The
convex surrogate replaces each coupling term by even powers:
sum (1 - x_i)^2 + 2 (x_{i+1}^2 + x_i^4).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .homotopy import sbnds_bounds
from .problem import ParametricProblem

SPEC_VERSION = 1
DEFAULT_MARGIN = 0.5
DEFAULT_BOX = 2.0


def xi_dim(n):
    return int(round(0.4 * n))


def hidden_width(n):
    """Policy hidden width grows with problem size: 30 * sqrt(n / 5)."""
    return int(round(30.0 * np.sqrt(n / 5.0)))


@dataclass(frozen=True)
class RandNlpSpec:
    """Frozen instance family: constraint matrices plus sampling ranges."""

    n: int
    seed: int
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    margin: float = DEFAULT_MARGIN
    box: float = DEFAULT_BOX

    def to_json(self, path):
        doc = {
            "spec_version": SPEC_VERSION,
            "family": "randnlp",
            "n": self.n,
            "seed": self.seed,
            "margin": self.margin,
            "box": self.box,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "C": self.C.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("spec_version") != SPEC_VERSION:
            raise DataError(f"unsupported spec version {doc.get('spec_version')!r}")
        return cls(n=doc["n"], seed=doc["seed"],
                   A=np.asarray(doc["A"], dtype=float),
                   b=np.asarray(doc["b"], dtype=float),
                   C=np.asarray(doc["C"], dtype=float),
                   margin=doc["margin"], box=doc["box"])


def generate_system(n, seed, margin=DEFAULT_MARGIN, box=DEFAULT_BOX):
    """Seeded constraint system with a certified strictly feasible origin."""
    if n < 2:
        raise ConfigError(f"problem size must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    d = xi_dim(n)
    A = rng.standard_normal((n, n))
    C = rng.standard_normal((n, d))
    b = margin + np.abs(C).sum(axis=1)
    return RandNlpSpec(n=n, seed=seed, A=A, b=b, C=C, margin=margin, box=box)


def rosenbrock_objective(x):
    """Vectorized objective on a (batch, n) array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, nxt = x[:, :-1], x[:, 1:]
    return ((1.0 - a) ** 2 + 2.0 * (nxt - a ** 2) ** 2).sum(axis=1)


def convex_surrogate(x):
    """Vectorized surrogate on a (batch, n) array; convex by construction."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, nxt = x[:, :-1], x[:, 1:]
    return ((1.0 - a) ** 2 + 2.0 * (nxt ** 2 + a ** 4)).sum(axis=1)


class RandNlpProblem(ParametricProblem):
    """Differentiable wrapper of a RandNlpSpec for policy training."""

    has_bounds = True
    supports_cobj = True
    domain_transforms = frozenset()

    def __init__(self, spec):
        self.spec = spec
        self.n = spec.n
        self.dim_x = spec.n
        self.dim_xi = spec.C.shape[1]
        self.num_eq = 0
        self.num_ineq = 3 * spec.n  # n linear + 2n box residuals
        self.lower = np.full(spec.n, -spec.box)
        self.upper = np.full(spec.n, spec.box)

    def objective(self, x, xi):
        a = ad.slice_cols(x, 0, self.n - 1)
        nxt = ad.slice_cols(x, 1, self.n)
        head = ad.square(ad.sub(1.0, a))
        tail = ad.mul(2.0, ad.square(ad.sub(nxt, ad.square(a))))
        return ad.row_sum(ad.add(head, tail))

    def convex_objective(self, x, xi):
        a = ad.slice_cols(x, 0, self.n - 1)
        nxt = ad.slice_cols(x, 1, self.n)
        head = ad.square(ad.sub(1.0, a))
        tail = ad.mul(2.0, ad.add(ad.square(nxt), ad.square(ad.square(a))))
        return ad.row_sum(ad.add(head, tail))

    def inequality_residuals(self, x, xi, state=None):
        rhs = self.spec.b[None, :] + xi @ self.spec.C.T
        linear = ad.sub(ad.matmul(x, self.spec.A.T), rhs)
        lo, hi = self.lower, self.upper
        if state is not None and state.has("sbnds"):
            lo, hi = sbnds_bounds(lo, hi, state.eps_minus, state.eps_plus, state.lam)
        below = ad.sub(lo[None, :], x)
        above = ad.sub(x, hi[None, :])
        return ad.concat_cols([linear, below, above])

    def sample_parameters(self, count, rng):
        if count <= 0:
            raise ConfigError(f"sample count must be positive, got {count}")
        return rng.uniform(-1.0, 1.0, size=(count, self.dim_xi))

    def fingerprint(self):
        import hashlib
        h = hashlib.sha256()
        for arr in (self.spec.A, self.spec.b, self.spec.C):
            h.update(np.ascontiguousarray(arr).tobytes())
        return f"randnlp:n={self.n}:seed={self.spec.seed}:{h.hexdigest()[:16]}"


@dataclass
class OracleResult:
    """Best feasible grid point; ``feasible`` is False when the scan found none."""

    objective: float
    x: np.ndarray
    feasible: bool


def oracle_grid_search(spec, xi, resolution=0.01, box=None):
    """Exhaustive feasibility-filtered scan with one 10x local refinement.

    Intended for n <= 3 only (cost grows as resolution^-n). Returns the
    best objective over grid points satisfying every inequality, refined
    once on a +-resolution neighborhood of the incumbent.
    """
    if spec.n > 3:
        raise ConfigError(f"grid oracle supports n <= 3, got n = {spec.n}")
    half = spec.box if box is None else box
    xi = np.asarray(xi, dtype=float).ravel()
    rhs = spec.b + spec.C @ xi

    def scan(axes):
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        feas = np.all(pts @ spec.A.T <= rhs[None, :], axis=1)
        if not feas.any():
            return None
        pts = pts[feas]
        vals = rosenbrock_objective(pts)
        k = int(np.argmin(vals))
        return float(vals[k]), pts[k]

    steps = int(round(2 * half / resolution))
    coarse = scan([np.linspace(-half, half, steps + 1)] * spec.n)
    if coarse is None:
        return OracleResult(np.inf, np.full(spec.n, np.nan), False)
    best_val, best_x = coarse

    fine_axes = [
        np.clip(np.linspace(c - resolution, c + resolution, 21), -half, half)
        for c in best_x
    ]
    fine = scan(fine_axes)
    if fine is not None and fine[0] < best_val:
        best_val, best_x = fine
    return OracleResult(best_val, best_x, True)
