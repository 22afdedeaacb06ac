"""Model coefficients for mean-field SDEs with common noise.

A model is a triple (f, g, g0) on R^d x P_2(R^d) plus the constants under
which its growth and dissipativity conditions are declared to hold.
Coefficients are restricted to a declarative family so that models are
serializable and the numeric assumption checks stay meaningful:

  drift      f(x, u) = L x + sum_r c_r * x^r (componentwise powers)
                       + sum of mean-field terms (see MeanFieldTerm)
  diffusions g, g0    diagonal affine: diag(a + s * x + m * mean(u))

Both worked examples and the linear mean-field oracle model fit this family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .measure import EmpiricalMeasure, wasserstein_p, wasserstein_to_dirac


class ModelDefinitionError(ValueError):
    """Malformed model: bad shapes, bad constants, unknown term kinds."""


class NumericOverflowError(FloatingPointError):
    """Coefficient evaluation produced a non-finite value."""


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared constants for the growth and dissipativity conditions.

    c1, c2 bound |f|^2 and |g|^2+|g0|^2; c3 > c4 are the dissipativity
    rates; c5 is the one-point dissipativity offset; l is the drift
    polynomial order; p is the moment order.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    l: float
    p: float

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3, self.c4, self.c5) <= 0:
            raise ModelDefinitionError("constants c1..c5 must be positive")
        if not self.c3 > self.c4:
            raise ModelDefinitionError("need c3 > c4")
        if self.l < 2:
            raise ModelDefinitionError("need l >= 2")
        if not (self.p > 2 and self.p > self.l / 2):
            raise ModelDefinitionError("need p > max(2, l/2)")

    def replace_p(self, p: float) -> "AssumptionConstants":
        return AssumptionConstants(self.c1, self.c2, self.c3, self.c4, self.c5, self.l, p)


EXPECTATION_LINEAR = "expectation_linear"
W2_TO_DIRAC = "w2_to_dirac"
CUSTOM_MOMENT = "custom_moment"


@dataclass(frozen=True)
class MeanFieldTerm:
    """One additive mean-field contribution to the drift.

    expectation_linear: matrix @ mean(u)
    w2_to_dirac:        coef * W_2(u, delta_0)          (coef a d-vector)
    custom_moment:      matrix @ mean(z^power)          (componentwise power)

    Each evaluation is O(n) in the number of support points.
    """

    kind: str
    matrix: np.ndarray = None  # type: ignore[assignment]
    coef: np.ndarray = None  # type: ignore[assignment]
    power: int = 1

    def __post_init__(self):
        if self.kind not in (EXPECTATION_LINEAR, W2_TO_DIRAC, CUSTOM_MOMENT):
            raise ModelDefinitionError(f"unknown mean-field term kind: {self.kind}")
        if self.kind == W2_TO_DIRAC:
            if self.coef is None:
                raise ModelDefinitionError("w2_to_dirac term needs coef")
            object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float).reshape(-1))
        else:
            if self.matrix is None:
                raise ModelDefinitionError(f"{self.kind} term needs matrix")
            object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=float)))

    def stat(self, points: np.ndarray, weights: np.ndarray = None):
        """Per-measure statistic this term consumes (points: (n, d))."""
        if weights is None:
            if self.kind == W2_TO_DIRAC:
                return np.sqrt(np.mean(np.sum(points**2, axis=-1)))
            if self.kind == EXPECTATION_LINEAR:
                return points.mean(axis=0)
            return (points**self.power).mean(axis=0)
        if self.kind == W2_TO_DIRAC:
            return np.sqrt(weights @ np.sum(points**2, axis=-1))
        if self.kind == EXPECTATION_LINEAR:
            return weights @ points
        return weights @ points**self.power

    def value(self, stat):
        if self.kind == W2_TO_DIRAC:
            return self.coef * stat
        return stat @ self.matrix.T


@dataclass(frozen=True)
class DriftSpec:
    """Polynomial-in-state drift plus mean-field terms."""

    linear: np.ndarray = None  # type: ignore[assignment]
    poly: dict = field(default_factory=dict)  # power -> (d,) coefficient vector
    mean_terms: tuple = ()

    def __post_init__(self):
        if self.linear is not None:
            object.__setattr__(self, "linear", np.atleast_2d(np.asarray(self.linear, dtype=float)))
        object.__setattr__(
            self,
            "poly",
            {int(k): np.asarray(v, dtype=float).reshape(-1) for k, v in self.poly.items()},
        )
        object.__setattr__(self, "mean_terms", tuple(self.mean_terms))


@dataclass(frozen=True)
class DiffusionSpec:
    """Diagonal affine diffusion: diag(const + state * x + mean * mean(u))."""

    diag_const: np.ndarray = None  # type: ignore[assignment]
    diag_state: np.ndarray = None  # type: ignore[assignment]
    diag_mean: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        for name in ("diag_const", "diag_state", "diag_mean"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(-1))

    def needs_mean(self) -> bool:
        return self.diag_mean is not None and np.any(self.diag_mean != 0)

    def diag(self, x: np.ndarray, mean_u: np.ndarray) -> np.ndarray:
        """Diagonal entries; x may be (..., d), mean_u broadcastable to it."""
        d = x.shape[-1]
        out = np.zeros_like(x)
        if self.diag_const is not None:
            out = out + self.diag_const
        if self.diag_state is not None:
            out = out + self.diag_state * x
        if self.diag_mean is not None:
            out = out + self.diag_mean * mean_u
        if out.shape[-1] != d:
            raise ModelDefinitionError("diffusion diagonal has wrong length")
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Complete model: dimension, coefficients, declared constants."""

    name: str
    dim: int
    drift: DriftSpec
    diff_idio: DiffusionSpec
    diff_common: DiffusionSpec
    constants: AssumptionConstants

    def __post_init__(self):
        if self.dim < 1:
            raise ModelDefinitionError("dim must be >= 1")

    # --- batch evaluation on (..., d) states against one measure's stats ---

    def measure_stats(self, points: np.ndarray, weights=None) -> dict:
        """Statistics of one empirical measure needed by all coefficients."""
        if weights is None:
            mean = points.mean(axis=0)
        else:
            mean = weights @ points
        stats = {"mean": mean}
        for k, term in enumerate(self.drift.mean_terms):
            stats[k] = term.stat(points, weights)
        return stats

    def drift_batch(self, x: np.ndarray, stats: dict) -> np.ndarray:
        f = np.zeros_like(x)
        if self.drift.linear is not None:
            f = f + x @ self.drift.linear.T
        for power, coef in self.drift.poly.items():
            f = f + coef * x**power
        for k, term in enumerate(self.drift.mean_terms):
            f = f + term.value(stats[k])
        return f

    def diff_idio_diag(self, x: np.ndarray, stats: dict) -> np.ndarray:
        return self.diff_idio.diag(x, stats["mean"])

    def diff_common_diag(self, x: np.ndarray, stats: dict) -> np.ndarray:
        return self.diff_common.diag(x, stats["mean"])

    # --- point evaluation against an EmpiricalMeasure ---

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ModelDefinitionError(
                f"state has dimension {x.shape[0]}, model '{self.name}' has dim {self.dim}"
            )
        if not np.all(np.isfinite(x)):
            raise NumericOverflowError(f"non-finite state passed to model '{self.name}': {x}")
        return x

    def f(self, x, u: EmpiricalMeasure) -> np.ndarray:
        x = self._check_point(x)
        stats = self.measure_stats(u.points, u.weights)
        out = self.drift_batch(x, stats)
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError(
                f"drift overflow in '{self.name}' at x={x}, measure mean={stats['mean']}"
            )
        return out

    def g(self, x, u: EmpiricalMeasure) -> np.ndarray:
        x = self._check_point(x)
        stats = self.measure_stats(u.points, u.weights)
        return np.diag(self.diff_idio_diag(x, stats))

    def g0(self, x, u: EmpiricalMeasure) -> np.ndarray:
        x = self._check_point(x)
        stats = self.measure_stats(u.points, u.weights)
        return np.diag(self.diff_common_diag(x, stats))


def drift_eval(model: ModelSpec, x, u: EmpiricalMeasure) -> np.ndarray:
    """Evaluate the drift at one (state, measure) pair."""
    return model.f(x, u)


# --------------------------------------------------------------------------
# builtin models
# --------------------------------------------------------------------------


def anharmonic1d(beta1=0.5, beta2=3.0, beta3=0.25, sigma=2.0, p=4.0) -> ModelSpec:
    """Scalar cubic model with linear mean interaction and multiplicative
    common noise:

        f(x, u)  = -x^3 + (1 - beta2) x + beta2*beta3 * mean(u)
        g(x, u)  = sigma
        g0(x, u) = beta1 * x

    Growth holds with c1 = 3 max(1, (1-beta2)^2, (beta2*beta3)^2),
    c2 = max(sigma^2, beta1^2), l = 6; dissipativity with
    c3 = -2(1-beta2) - 5 beta1^2 - beta2*beta3 and c4 = beta2*beta3
    (requires c3 > c4; the default parameters give c3 = 2, c4 = 0.75).
    """
    c1 = 3.0 * max(1.0, (1.0 - beta2) ** 2, (beta2 * beta3) ** 2)
    c2 = max(sigma**2, beta1**2)
    c3 = -2.0 * (1.0 - beta2) - 5.0 * beta1**2 - beta2 * beta3
    c4 = beta2 * beta3
    drift = DriftSpec(
        linear=[[1.0 - beta2]],
        poly={3: [-1.0]},
        mean_terms=(MeanFieldTerm(EXPECTATION_LINEAR, matrix=[[beta2 * beta3]]),),
    )
    return ModelSpec(
        name="anharmonic1d",
        dim=1,
        drift=drift,
        diff_idio=DiffusionSpec(diag_const=[sigma]),
        diff_common=DiffusionSpec(diag_state=[beta1]),
        constants=AssumptionConstants(c1=c1, c2=c2, c3=c3, c4=c4, c5=_fit_c5_default(), l=6.0, p=p),
    )


def cubic2d() -> ModelSpec:
    """Two-dimensional cubic model with state coupling and mean interaction:

        f1 = -2 x1 - x1^3 + (1/2) mean(u)_1
        f2 = -2 x2 + x1 - x2^3 + (1/2) mean(u)_2
        g  = (1/2) diag(1 - x1, 1 - x2)
        g0 = (1/4) diag(-x1 + mean(u)_1, -x2 + mean(u)_2)

    Growth holds with c1 = 16, c2 = 1, l = 6; dissipativity with p = 4,
    c3 = 11/8, c4 = 5/8.
    """
    drift = DriftSpec(
        linear=[[-2.0, 0.0], [1.0, -2.0]],
        poly={3: [-1.0, -1.0]},
        mean_terms=(MeanFieldTerm(EXPECTATION_LINEAR, matrix=0.5 * np.eye(2)),),
    )
    return ModelSpec(
        name="cubic2d",
        dim=2,
        drift=drift,
        diff_idio=DiffusionSpec(diag_const=[0.5, 0.5], diag_state=[-0.5, -0.5]),
        diff_common=DiffusionSpec(diag_state=[-0.25, -0.25], diag_mean=[0.25, 0.25]),
        constants=AssumptionConstants(
            c1=16.0, c2=1.0, c3=11.0 / 8.0, c4=5.0 / 8.0, c5=_fit_c5_default(), l=6.0, p=4.0
        ),
    )


def ou_meanfield(a=1.0, b=0.5, sigma=0.5, sigma0=0.5, p=4.0) -> ModelSpec:
    """Linear mean-reverting oracle model with closed-form stationary law:

        f(x, u) = -a (x - b * mean(u)),  g = sigma I,  g0 = sigma0 I.

    Stationary variance is sigma^2/(2a) + sigma0^2/(2a(1-b)); the
    conditional (block) mean has stationary variance sigma0^2/(2a(1-b)).
    Dissipativity holds with c3 = 2a - 2ab, c4 = ab/2 (Young's inequality
    with 2sw <= 2s^2 + w^2/2; diffusion differences vanish).
    """
    if not 0 <= b < 1:
        raise ModelDefinitionError("need 0 <= b < 1")
    drift = DriftSpec(
        linear=[[-a]],
        mean_terms=(MeanFieldTerm(EXPECTATION_LINEAR, matrix=[[a * b]]),),
    )
    return ModelSpec(
        name="ou_meanfield",
        dim=1,
        drift=drift,
        diff_idio=DiffusionSpec(diag_const=[sigma]),
        diff_common=DiffusionSpec(diag_const=[sigma0]),
        constants=AssumptionConstants(
            c1=max(2 * a**2, 2 * (a * b) ** 2),
            c2=sigma**2 + sigma0**2,
            c3=2 * a - 2 * a * b,
            c4=a * b / 2 if b > 0 else (2 * a - 2 * a * b) / 4,
            c5=_fit_c5_default(),
            l=2.0,
            p=p,
        ),
    )


def brownian(dim=1) -> ModelSpec:
    """Measure-free Brownian motion (f = 0, g = g0 = I): no invariant
    measure; used as a negative control.  The declared constants are
    placeholders (dissipativity genuinely fails for this model)."""
    return ModelSpec(
        name="brownian",
        dim=dim,
        drift=DriftSpec(),
        diff_idio=DiffusionSpec(diag_const=np.ones(dim)),
        diff_common=DiffusionSpec(diag_const=np.ones(dim)),
        constants=AssumptionConstants(c1=1.0, c2=4.0, c3=1.0, c4=0.5, c5=1.0, l=2.0, p=4.0),
    )


def zero(dim=1) -> ModelSpec:
    """No dynamics at all (f = g = g0 = 0)."""
    return ModelSpec(
        name="zero",
        dim=dim,
        drift=DriftSpec(),
        diff_idio=DiffusionSpec(diag_const=np.zeros(dim)),
        diff_common=DiffusionSpec(diag_const=np.zeros(dim)),
        constants=AssumptionConstants(c1=1.0, c2=1.0, c3=1.0, c4=0.5, c5=1.0, l=2.0, p=4.0),
    )


def _fit_c5_default() -> float:
    # c5 is only asserted to exist; checkers fit it empirically.
    return 1.0


BUILTIN_MODELS = {
    "anharmonic1d": anharmonic1d,
    "cubic2d": cubic2d,
    "ou_meanfield": ou_meanfield,
    "brownian": brownian,
    "zero": zero,
}


def get_model(name: str, **kwargs) -> ModelSpec:
    if name not in BUILTIN_MODELS:
        raise ModelDefinitionError(
            f"unknown model '{name}'; builtins: {', '.join(sorted(BUILTIN_MODELS))}"
        )
    return BUILTIN_MODELS[name](**kwargs)


# --------------------------------------------------------------------------
# JSON config loading
# --------------------------------------------------------------------------


def _diffusion_from_config(doc: dict) -> DiffusionSpec:
    return DiffusionSpec(
        diag_const=doc.get("diag_const"),
        diag_state=doc.get("diag_state"),
        diag_mean=doc.get("diag_mean"),
    )


def model_from_config(doc) -> ModelSpec:
    """Build a ModelSpec from a JSON document (dict, JSON string, or path)."""
    if isinstance(doc, str):
        if doc.lstrip().startswith("{"):
            doc = json.loads(doc)
        else:
            with open(doc) as fh:
                doc = json.load(fh)
    if "builtin" in doc:
        return get_model(doc["builtin"], **doc.get("params", {}))
    try:
        dr = doc["drift"]
        terms = []
        for t in dr.get("mean_terms", []):
            terms.append(
                MeanFieldTerm(
                    kind=t["kind"],
                    matrix=t.get("matrix"),
                    coef=t.get("coef"),
                    power=t.get("power", 1),
                )
            )
        drift = DriftSpec(
            linear=dr.get("linear"), poly=dr.get("poly", {}), mean_terms=tuple(terms)
        )
        return ModelSpec(
            name=doc["name"],
            dim=int(doc["dim"]),
            drift=drift,
            diff_idio=_diffusion_from_config(doc["diff_idio"]),
            diff_common=_diffusion_from_config(doc["diff_common"]),
            constants=AssumptionConstants(**doc["constants"]),
        )
    except KeyError as e:
        raise ModelDefinitionError(f"model config missing field: {e}") from e


# --------------------------------------------------------------------------
# numeric assumption checks
# --------------------------------------------------------------------------

INEQ_SLACK = 1e-9


@dataclass
class GrowthReport:
    max_drift_ratio: float
    max_diffusion_ratio: float
    declared_c1: float
    declared_c2: float
    passed: bool


@dataclass
class DissipativityReport:
    n_samples: int
    n_skipped: int
    max_violation: float  # max over samples of LHS - RHS; <= slack means pass
    fitted_c3: float
    fitted_c4: float
    fitted_c5: float
    declared_c3: float
    declared_c4: float
    passed: bool


def check_growth(model: ModelSpec, sample_states, sample_measures) -> GrowthReport:
    """Maximal observed ratios of |f|^2 and |g|^2+|g0|^2 against their
    declared growth envelopes, over the cartesian product of samples."""
    if not sample_states or not sample_measures:
        raise ModelDefinitionError("need nonempty state and measure samples")
    c = model.constants
    rf = 0.0
    rg = 0.0
    for u in sample_measures:
        w2d2 = wasserstein_to_dirac(u, np.zeros(model.dim), 2.0) ** 2
        stats = model.measure_stats(u.points, u.weights)
        for x in sample_states:
            x = np.asarray(x, dtype=float).reshape(-1)
            xn = np.linalg.norm(x)
            fx = model.drift_batch(x, stats)
            gx = model.diff_idio_diag(x, stats)
            g0x = model.diff_common_diag(x, stats)
            rf = max(rf, float(fx @ fx) / (1.0 + xn**c.l + w2d2))
            rg = max(rg, float(gx @ gx + g0x @ g0x) / (1.0 + xn**2 + w2d2))
    passed = rf <= c.c1 + INEQ_SLACK and rg <= c.c2 + INEQ_SLACK
    return GrowthReport(rf, rg, c.c1, c.c2, passed)


def dissipativity_lhs(model: ModelSpec, x, y, u: EmpiricalMeasure, v: EmpiricalMeasure, p: float) -> float:
    """2 (x-y)^T (f(x,u) - f(y,v)) + (p-1) (|g(x,u)-g(y,v)|^2 + |g0 ...|^2),
    diffusion norms in the Hilbert-Schmidt sense."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    su = model.measure_stats(u.points, u.weights)
    sv = model.measure_stats(v.points, v.weights)
    df = model.drift_batch(x, su) - model.drift_batch(y, sv)
    dg = model.diff_idio_diag(x, su) - model.diff_idio_diag(y, sv)
    dg0 = model.diff_common_diag(x, su) - model.diff_common_diag(y, sv)
    return float(2.0 * (x - y) @ df + (p - 1.0) * (dg @ dg + dg0 @ dg0))


def check_dissipativity(model: ModelSpec, pair_samples, p: float) -> DissipativityReport:
    """Sampled check of the dissipativity inequality.

    pair_samples: iterable of (x, y, u, v).  The W_2(u, v) term uses the
    exact optimal coupling.  Degenerate samples (x == y and u is v with
    equal supports) are skipped.  Also fits the tightest (c3, c4) by least
    squares on the inequality written as equality, and c5 from the
    one-point version at y = 0, v = delta_0.
    """
    c = model.constants
    lhs_vals = []
    feats = []
    skipped = 0
    max_violation = -np.inf
    for x, y, u, v in pair_samples:
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        same_meas = u.n == v.n and np.array_equal(u.points, v.points) and np.array_equal(
            u.weights, v.weights
        )
        if np.array_equal(x, y) and same_meas:
            skipped += 1
            continue
        w2 = 0.0 if same_meas else wasserstein_p(u, v, 2.0)
        lhs = dissipativity_lhs(model, x, y, u, v, p)
        s2 = float((x - y) @ (x - y))
        rhs = -c.c3 * s2 + c.c4 * w2**2
        max_violation = max(max_violation, lhs - rhs)
        lhs_vals.append(lhs)
        feats.append((s2, w2**2))
    if not lhs_vals:
        raise ModelDefinitionError("all dissipativity samples were degenerate")
    A = np.array([[-s2, w2sq] for s2, w2sq in feats])
    coef, *_ = np.linalg.lstsq(A, np.array(lhs_vals), rcond=None)
    # one-point fit of c5: LHS(x, 0, u, delta_0) + c3|x|^2 - c4 W2^2 <= c5
    c5_vals = []
    zero_meas = EmpiricalMeasure(np.zeros((1, model.dim)))
    for x, _, u, _ in list(pair_samples)[:200]:
        w2d = wasserstein_to_dirac(u, np.zeros(model.dim), 2.0)
        lhs0 = dissipativity_lhs(model, x, np.zeros(model.dim), u, zero_meas, p)
        x = np.asarray(x, dtype=float).reshape(-1)
        c5_vals.append(lhs0 + c.c3 * float(x @ x) - c.c4 * w2d**2)
    fitted_c5 = float(max(c5_vals)) if c5_vals else float("nan")
    return DissipativityReport(
        n_samples=len(lhs_vals),
        n_skipped=skipped,
        max_violation=float(max_violation),
        fitted_c3=float(coef[0]),
        fitted_c4=float(coef[1]),
        fitted_c5=fitted_c5,
        declared_c3=c.c3,
        declared_c4=c.c4,
        passed=bool(max_violation <= INEQ_SLACK),
    )
