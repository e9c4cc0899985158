"""AC optimal power flow problem family.

Decision vector per instance (all per-unit):

    x = [V_real (n_bus) | V_imag (n_bus) | P_g (n_gen) | Q_g (n_gen)]

Instance parameters are the sampled loads, stacked as

    xi = [P_d at load buses | Q_d at load buses]   (bus order)

where a load bus is any bus with nonzero base demand. Equalities are the
2*n_bus real/imaginary power-balance residuals plus the slack-bus
imaginary-voltage reference; inequalities are the |V|, P_g, Q_g bound
pairs. Costs are quadratic in MW, so P_g is rescaled by base_mva inside
the objective only — everything else stays per-unit.

Domain homotopies: load-stepping scales demand by lam (with a warm
regularizer toward x = 0 at lam = 0); Tx-stepping blends the admittance
matrix from a near-shorted network (series impedances scaled by
delta_short, charging and shunts dropped) back to the real one. The
generation pull-up term (total P_g at least total demand plus a small
reserve) is never transformed.
"""

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .homotopy import sbnds_bounds
from .problem import ParametricProblem

CASE_SCHEMA_VERSION = 1
BUS_TYPES = ("slack", "pv", "pq")
VMAG_GUARD = 1e-12  # keeps d|V|/dV finite at V = 0 (load-stepping start)

_BUS_FIELDS = {"id", "type", "gs", "bs", "vmin", "vmax"}
_BRANCH_FIELDS = {"from", "to", "r", "x", "b", "tap", "shift", "status"}
_GEN_FIELDS = {"bus", "pmin", "pmax", "qmin", "qmax", "alpha", "beta", "gamma"}
_LOAD_FIELDS = {"bus", "pd", "qd"}


@dataclass(frozen=True)
class GridCase:
    """Physical instance data; validated and immutable after construction."""

    name: str
    base_mva: float
    buses: tuple
    branches: tuple
    generators: tuple
    loads: tuple

    def __post_init__(self):
        ids = [b["id"] for b in self.buses]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate bus ids")
        slack = [b for b in self.buses if b["type"] == "slack"]
        if len(slack) != 1:
            raise DataError(f"expected exactly one slack bus, found {len(slack)}")
        known = set(ids)
        for b in self.buses:
            if b["type"] not in BUS_TYPES:
                raise DataError(f"bus {b['id']}: unknown type {b['type']!r}")
            if b["vmin"] > b["vmax"]:
                raise DataError(f"bus {b['id']}: vmin > vmax")
        for br in self.branches:
            if br["from"] not in known or br["to"] not in known:
                raise DataError(f"branch {br['from']}-{br['to']} references unknown bus")
        for g in self.generators:
            if g["bus"] not in known:
                raise DataError(f"generator at unknown bus {g['bus']}")
            if g["pmin"] > g["pmax"] or g["qmin"] > g["qmax"]:
                raise DataError(f"generator at bus {g['bus']}: inverted limits")
        for ld in self.loads:
            if ld["bus"] not in known:
                raise DataError(f"load at unknown bus {ld['bus']}")

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_gen(self):
        return len(self.generators)

    def bus_index(self):
        return {b["id"]: i for i, b in enumerate(self.buses)}

    def fingerprint(self):
        h = hashlib.sha256(json.dumps(case_to_dict(self), sort_keys=True).encode())
        return f"acopf:{self.name}:{h.hexdigest()[:16]}"


def case_to_dict(case):
    return {
        "schema_version": CASE_SCHEMA_VERSION,
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": list(case.buses),
        "branches": list(case.branches),
        "generators": list(case.generators),
        "loads": list(case.loads),
    }


def case_from_dict(doc):
    if doc.get("schema_version") != CASE_SCHEMA_VERSION:
        raise DataError(f"unsupported case schema version {doc.get('schema_version')!r}")
    expected = {"schema_version", "name", "base_mva", "buses", "branches",
                "generators", "loads"}
    _reject_unknown(doc, expected, "case")
    for b in doc["buses"]:
        _reject_unknown(b, _BUS_FIELDS, f"bus {b.get('id')}")
    for br in doc["branches"]:
        _reject_unknown(br, _BRANCH_FIELDS, "branch")
    for g in doc["generators"]:
        _reject_unknown(g, _GEN_FIELDS, "generator")
    for ld in doc["loads"]:
        _reject_unknown(ld, _LOAD_FIELDS, "load")
    return GridCase(name=doc["name"], base_mva=float(doc["base_mva"]),
                    buses=tuple(doc["buses"]), branches=tuple(doc["branches"]),
                    generators=tuple(doc["generators"]), loads=tuple(doc["loads"]))


def _reject_unknown(record, allowed, label):
    unknown = set(record) - allowed
    if unknown:
        raise DataError(f"{label}: unknown keys {sorted(unknown)}")


def load_case(path_or_name):
    """Load a grid case from a JSON file or a bundled case name ('case30')."""
    text = None
    name = str(path_or_name)
    if name.endswith(".json"):
        try:
            with open(name) as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read case file {name}: {exc}") from exc
    else:
        ref = resources.files("homol2o.data").joinpath(f"{name}.json")
        if not ref.is_file():
            raise DataError(f"no bundled case named {name!r}")
        text = ref.read_text()
    try:
        return case_from_dict(json.loads(text))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed case data: {exc}") from exc


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense nodal admittance, stored as paired real/imaginary parts."""

    g: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.g.shape[0]

    def complex(self):
        return self.g + 1j * self.b


def build_ybus(case, impedance_scale=1.0, include_charging=True, include_shunts=True):
    """Standard bus-admittance assembly with the conventional two-port stamp.

    ``impedance_scale``/``include_*`` exist for the Tx-stepping Y_0 variant;
    defaults build the physical matrix.
    """
    n = case.n_bus
    idx = case.bus_index()
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br["status"]:
            continue
        if br["r"] == 0.0 and br["x"] == 0.0:
            raise DataError(
                f"branch {br['from']}-{br['to']}: zero series impedance is unsupported")
        f, t = idx[br["from"]], idx[br["to"]]
        ys = 1.0 / ((br["r"] + 1j * br["x"]) * impedance_scale)
        bc = 1j * br["b"] / 2.0 if include_charging else 0.0
        tau = (br["tap"] if br["tap"] != 0.0 else 1.0) * np.exp(1j * br["shift"])
        y[f, f] += (ys + bc) / (tau * np.conj(tau))
        y[f, t] += -ys / np.conj(tau)
        y[t, f] += -ys / tau
        y[t, t] += ys + bc
    if include_shunts:
        for i, bus in enumerate(case.buses):
            y[i, i] += bus["gs"] + 1j * bus["bs"]
    return AdmittanceMatrix(g=np.ascontiguousarray(y.real), b=np.ascontiguousarray(y.imag))


def tx_step_ybus(case, lam, delta_short=1e-3):
    """Affine blend (1-lam) * Y_0 + lam * Y_bus of the near-shorted and real grids."""
    if delta_short <= 0:
        raise ConfigError(f"delta_short must be positive, got {delta_short}")
    ybus = build_ybus(case)
    if lam == 1.0:
        return ybus
    y0 = build_ybus(case, impedance_scale=delta_short,
                    include_charging=False, include_shunts=False)
    return AdmittanceMatrix(g=(1 - lam) * y0.g + lam * ybus.g,
                            b=(1 - lam) * y0.b + lam * ybus.b)


def sample_loads(case, count, seed):
    """Seeded uniform load profiles, each entry in [0.75, 1.50] x its base value."""
    if count <= 0:
        raise ConfigError(f"sample count must be positive, got {count}")
    base = _load_base_vector(case)
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.75, 1.50, size=(count, base.size))
    return scale * base[None, :]


def _load_buses(case):
    return [ld for ld in case.loads if ld["pd"] != 0.0 or ld["qd"] != 0.0]


def _load_base_vector(case):
    loads = _load_buses(case)
    return np.array([ld["pd"] for ld in loads] + [ld["qd"] for ld in loads])


class AcopfProblem(ParametricProblem):
    """Differentiable AC-OPF residuals and cost for one grid case."""

    has_bounds = True
    supports_cobj = False
    domain_transforms = frozenset({"load_step", "tx_step"})

    def __init__(self, case, pullup_eps=0.01, use_pullup=True):
        self.case = case
        self.pullup_eps = pullup_eps
        self.use_pullup = use_pullup
        n, m = case.n_bus, case.n_gen
        self.n_bus, self.n_gen = n, m
        self.dim_x = 2 * n + 2 * m
        self.num_eq = 2 * n + 1
        self.num_ineq = 2 * n + 4 * m

        idx = case.bus_index()
        self.slack_index = next(i for i, b in enumerate(case.buses) if b["type"] == "slack")
        self.ybus = build_ybus(case)
        self._y0 = None

        self.gen_incidence = np.zeros((n, m))
        for j, g in enumerate(case.generators):
            self.gen_incidence[idx[g["bus"]], j] = 1.0

        loads = _load_buses(case)
        self.n_load = len(loads)
        self.dim_xi = 2 * self.n_load
        self.load_incidence = np.zeros((n, self.n_load))
        for j, ld in enumerate(loads):
            self.load_incidence[idx[ld["bus"]], j] = 1.0
        self.load_base = _load_base_vector(case)

        self.vmin = np.array([b["vmin"] for b in case.buses])
        self.vmax = np.array([b["vmax"] for b in case.buses])
        self.pgmin = np.array([g["pmin"] for g in case.generators])
        self.pgmax = np.array([g["pmax"] for g in case.generators])
        self.qgmin = np.array([g["qmin"] for g in case.generators])
        self.qgmax = np.array([g["qmax"] for g in case.generators])

        base = case.base_mva
        self.cost_quad = np.array([g["alpha"] for g in case.generators]) * base * base
        self.cost_lin = np.array([g["beta"] for g in case.generators]) * base
        self.cost_const = float(sum(g["gamma"] for g in case.generators))

    # decision-vector slices ------------------------------------------

    def split_decision(self, x):
        n, m = self.n_bus, self.n_gen
        vr = ad.slice_cols(x, 0, n)
        vi = ad.slice_cols(x, n, 2 * n)
        pg = ad.slice_cols(x, 2 * n, 2 * n + m)
        qg = ad.slice_cols(x, 2 * n + m, 2 * n + 2 * m)
        return vr, vi, pg, qg

    def _demand(self, xi, state):
        """Per-bus (batch, n_bus) demand arrays; scaled under load-stepping."""
        xi = np.asarray(xi, dtype=float)
        pd = xi[:, :self.n_load] @ self.load_incidence.T
        qd = xi[:, self.n_load:] @ self.load_incidence.T
        if state is not None and state.has("load_step"):
            pd = state.lam * pd
            qd = state.lam * qd
        return pd, qd

    def _admittance(self, state):
        if state is None or not state.has("tx_step") or state.lam == 1.0:
            return self.ybus
        if self._y0 is None or self._y0[0] != state.delta_short:
            y0 = build_ybus(self.case, impedance_scale=state.delta_short,
                            include_charging=False, include_shunts=False)
            self._y0 = (state.delta_short, y0)
        y0 = self._y0[1]
        lam = state.lam
        return AdmittanceMatrix(g=(1 - lam) * y0.g + lam * self.ybus.g,
                                b=(1 - lam) * y0.b + lam * self.ybus.b)

    # evaluators -------------------------------------------------------

    def objective(self, x, xi):
        _, _, pg, _ = self.split_decision(x)
        quad = ad.mul(ad.square(pg), self.cost_quad[None, :])
        lin = ad.mul(pg, self.cost_lin[None, :])
        return ad.add(ad.row_sum(ad.add(quad, lin)), self.cost_const)

    def equality_residuals(self, x, xi, state=None):
        vr, vi, pg, qg = self.split_decision(x)
        y = self._admittance(state)
        pd, qd = self._demand(xi, state)

        ar = ad.sub(ad.matmul(vr, y.g.T), ad.matmul(vi, y.b.T))   # Re(Y V)
        ai = ad.add(ad.matmul(vr, y.b.T), ad.matmul(vi, y.g.T))   # Im(Y V)
        p_inj = ad.add(ad.mul(vr, ar), ad.mul(vi, ai))            # Re(V (Y V)*)
        q_inj = ad.sub(ad.mul(vi, ar), ad.mul(vr, ai))            # Im(V (Y V)*)

        pg_bus = ad.matmul(pg, self.gen_incidence.T)
        qg_bus = ad.matmul(qg, self.gen_incidence.T)
        res_p = ad.sub(ad.sub(pg_bus, pd), p_inj)
        res_q = ad.sub(ad.sub(qg_bus, qd), q_inj)
        slack = ad.slice_cols(vi, self.slack_index, self.slack_index + 1)
        return ad.concat_cols([res_p, res_q, slack])

    def inequality_residuals(self, x, xi, state=None):
        vr, vi, pg, qg = self.split_decision(x)
        vmag = ad.sqrt(ad.add(ad.add(ad.square(vr), ad.square(vi)), VMAG_GUARD))

        bounds = [(self.vmin, self.vmax, vmag),
                  (self.pgmin, self.pgmax, pg),
                  (self.qgmin, self.qgmax, qg)]
        parts = []
        for lo, hi, quantity in bounds:
            if state is not None and state.has("sbnds"):
                lo, hi = sbnds_bounds(lo, hi, state.eps_minus, state.eps_plus, state.lam)
            parts.append(ad.sub(lo[None, :], quantity))
            parts.append(ad.sub(quantity, hi[None, :]))
        return ad.concat_cols(parts)

    def extra_penalties(self, x, xi, state, weights):
        terms = []
        if self.use_pullup:
            _, _, pg, _ = self.split_decision(x)
            pd, _ = self._demand(xi, state)
            total_pd = pd.sum(axis=1, keepdims=True)
            resid = ad.sub(ad.add(self.pullup_eps, total_pd), ad.row_sum(pg))
            terms.append(ad.mul(weights.w_pullup, ad.hinge_row_sum(resid)))
        if state is not None and state.has("load_step") and state.lam == 0.0:
            warm = ad.mul(weights.w_warm / self.dim_x, ad.square_row_sum(x))
            terms.append(warm)
        if not terms:
            return None
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out

    def sample_parameters(self, count, rng):
        if count <= 0:
            raise ConfigError(f"sample count must be positive, got {count}")
        scale = rng.uniform(0.75, 1.50, size=(count, self.load_base.size))
        return scale * self.load_base[None, :]

    def xi_column_names(self):
        loads = _load_buses(self.case)
        return [f"p_bus{ld['bus']}" for ld in loads] + [f"q_bus{ld['bus']}" for ld in loads]

    def fingerprint(self):
        return self.case.fingerprint()


# spec-level op wrappers ---------------------------------------------

def power_balance_residual(case, y, x, loads):
    """Power-balance residuals (batch, 2*n_bus) for explicit Y and loads.

    ``loads`` is a (pd_full, qd_full) pair of per-bus arrays; ``x`` may be
    a Tensor or array in the standard decision layout.
    """
    problem = AcopfProblem(case, use_pullup=False)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    vr, vi, pg, qg = problem.split_decision(x)
    pd, qd = loads
    ar = ad.sub(ad.matmul(vr, y.g.T), ad.matmul(vi, y.b.T))
    ai = ad.add(ad.matmul(vr, y.b.T), ad.matmul(vi, y.g.T))
    p_inj = ad.add(ad.mul(vr, ar), ad.mul(vi, ai))
    q_inj = ad.sub(ad.mul(vi, ar), ad.mul(vr, ai))
    res_p = ad.sub(ad.sub(ad.matmul(pg, problem.gen_incidence.T), np.atleast_2d(pd)), p_inj)
    res_q = ad.sub(ad.sub(ad.matmul(qg, problem.gen_incidence.T), np.atleast_2d(qd)), q_inj)
    return ad.concat_cols([res_p, res_q])


def slack_residual(case, x):
    """Imaginary part of the slack-bus voltage (the angle reference)."""
    problem = AcopfProblem(case, use_pullup=False)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    _, vi, _, _ = problem.split_decision(x)
    return ad.slice_cols(vi, problem.slack_index, problem.slack_index + 1)


def operational_residuals(case, x, state=None):
    """Stacked bound residuals (two <= 0 rows per bounded quantity)."""
    problem = AcopfProblem(case, use_pullup=False)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    return problem.inequality_residuals(x, None, state)


def dispatch_cost(case, x):
    """Generation cost in $/h; P_g converted from per-unit to MW internally."""
    problem = AcopfProblem(case, use_pullup=False)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    return problem.objective(x, None)


def pg_pullup_residual(case, x, loads_pd, eps=0.01):
    """Reserve constraint eps + sum(P_d) - sum(P_g) <= 0 (never transformed)."""
    problem = AcopfProblem(case, use_pullup=False)
    if not isinstance(x, ad.Tensor):
        x = ad.constant(x)
    _, _, pg, _ = problem.split_decision(x)
    total_pd = np.atleast_2d(np.asarray(loads_pd, dtype=float)).sum(axis=1, keepdims=True)
    return ad.sub(ad.add(eps, total_pd), ad.row_sum(pg))


def load_step_loads(pd, qd, lam):
    """Demand scaled by the continuation parameter (both P and Q)."""
    return lam * np.asarray(pd, dtype=float), lam * np.asarray(qd, dtype=float)
