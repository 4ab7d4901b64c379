"""Verification of contact, even-contact, and Engel structures.

All checks sample a chart with a :class:`~engelcalc.charts.SamplePlan` and
report per-point witness data under explicit tolerances:

* never-vanishing checks compare the pointwise coefficient norm against
  ``tol.never_vanishing`` times its maximum over the box;
* identically-zero checks compare the max against ``tol.zero`` times a
  scale derived from the factors entering the expression (at least 1);
* rank checks count singular values at ratio ``tol.rank`` to the largest.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import expr as ex
from .charts import (
    Chart,
    ChartMismatchError,
    DimensionError,
    GeometryError,
    KForm,
    SamplePlan,
    VectorField,
    exterior_derivative,
    form_evaluate_scalar,
    interior_product,
    lie_bracket,
    lie_derivative_form,
    pairing,
    sample_points,
    wedge,
)
from .expr import ScalarExpr, simplify


@dataclass(frozen=True, slots=True)
class Tolerances:
    rank: float = 1e-7
    never_vanishing: float = 1e-6
    zero: float = 1e-9
    projection: float = 1e-8
    nonzero_norm: float = 1e-8  # threshold on squared norms

    def as_dict(self) -> dict[str, float]:
        return {
            "rank": self.rank,
            "never_vanishing": self.never_vanishing,
            "zero": self.zero,
            "projection": self.projection,
            "nonzero_norm": self.nonzero_norm,
        }


DEFAULT_TOLERANCES = Tolerances()
DEFAULT_PLAN = SamplePlan(grid=3, random=16, seed=0)


class CheckError(GeometryError):
    """A structural precondition failed; carries the offending report."""

    def __init__(self, message: str, report: "VerificationReport | None" = None):
        super().__init__(message)
        self.report = report


class RankDeficiencyError(CheckError):
    pass


@dataclass(frozen=True)
class VerificationReport:
    kind: str
    passed: bool
    tolerances: dict[str, float]
    witnesses: dict[str, float]
    first_failure: dict | None = None
    subreports: tuple["VerificationReport", ...] = ()
    notes: tuple[str, ...] = ()
    per_point: dict[str, np.ndarray] = field(default_factory=dict)

    def require(self, what: str = "") -> "VerificationReport":
        if not self.passed:
            raise CheckError(
                f"{what or self.kind} failed: witnesses {self.witnesses},"
                f" first failure {self.first_failure}",
                self,
            )
        return self


def _failure_at(points: np.ndarray, idx: int, **values) -> dict:
    return {
        "point": [float(v) for v in points[idx]],
        "sample_index": int(idx),
        **{k: float(v) for k, v in values.items()},
    }


def never_vanishing_report(
    kind: str, values: np.ndarray, points: np.ndarray, tol: Tolerances
) -> VerificationReport:
    vmax = float(np.max(values, initial=0.0))
    vmin = float(np.min(values)) if values.size else 0.0
    rel = vmin / vmax if vmax > 0 else 0.0
    passed = vmax > 0 and rel >= tol.never_vanishing
    first = None
    if not passed and values.size:
        idx = int(np.argmin(values))
        first = _failure_at(points, idx, value=values[idx])
    return VerificationReport(
        kind=kind,
        passed=passed,
        tolerances=tol.as_dict(),
        witnesses={"min_abs": vmin, "max_abs": vmax, "min_over_max": rel},
        first_failure=first,
        per_point={"witness": values},
    )


def zero_report(
    kind: str,
    values: np.ndarray,
    points: np.ndarray,
    tol: Tolerances,
    scale: float,
) -> VerificationReport:
    scale = max(1.0, float(scale))
    vmax = float(np.max(values, initial=0.0))
    passed = vmax <= tol.zero * scale
    first = None
    if not passed and values.size:
        idx = int(np.argmax(values))
        first = _failure_at(points, idx, value=values[idx])
    return VerificationReport(
        kind=kind,
        passed=passed,
        tolerances=tol.as_dict(),
        witnesses={"max_abs": vmax, "scale": scale, "max_rel": vmax / scale},
        first_failure=first,
        per_point={"residual": values},
    )


def matrix_ranks(mats: np.ndarray, ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """Numerical ranks of a stack of matrices, plus the smallest sv ratio.

    Rank r means exactly r singular values satisfy sigma_i >= ratio * sigma_1.
    """
    s = np.linalg.svd(mats, compute_uv=False)
    s1 = s[:, 0]
    ranks = np.where(s1 > 0.0, np.sum(s >= ratio * s1[:, None], axis=1), 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        last_ratio = np.where(s1 > 0.0, s[:, -1] / np.where(s1 > 0, s1, 1.0), 0.0)
    return ranks, last_ratio


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True, slots=True)
class Distribution2:
    """Rank-2 plane field given by a two-field frame.

    ``legendrian_coefficients`` is optional construction metadata: for
    product-chart structures built from a contact frame it stores the
    (a, b) expressions with generator = a*V0 + b*V1, enabling symbolic
    extraction of the induced line fields.
    """

    chart: Chart
    x: VectorField
    y: VectorField
    legendrian_coefficients: tuple[ScalarExpr, ScalarExpr] | None = None

    def __post_init__(self):
        if self.x.chart != self.chart or self.y.chart != self.chart:
            raise ChartMismatchError("frame fields must live on the given chart")

    @property
    def frame(self) -> tuple[VectorField, VectorField]:
        return (self.x, self.y)

    def evaluate_frame(self, points: np.ndarray) -> np.ndarray:
        """(n, dim, 2) array with frame fields as columns."""
        return np.stack([self.x.evaluate_at(points), self.y.evaluate_at(points)], axis=2)

    def validate_rank(self, plan: SamplePlan, tol: Tolerances = DEFAULT_TOLERANCES) -> VerificationReport:
        pts = sample_points(self.chart, plan)
        mats = self.evaluate_frame(pts)
        ranks, ratios = matrix_ranks(mats, tol.rank)
        passed = bool(np.all(ranks == 2))
        first = None
        if not passed:
            idx = int(np.argmin(ranks))
            first = _failure_at(pts, idx, rank=ranks[idx], sv_ratio=ratios[idx])
        return VerificationReport(
            kind="distribution_rank2",
            passed=passed,
            tolerances=tol.as_dict(),
            witnesses={
                "min_sv_ratio": float(np.min(ratios)),
                "rank_min": int(np.min(ranks)),
                "rank_max": int(np.max(ranks)),
            },
            first_failure=first,
            per_point={"rank": ranks, "sv_ratio": ratios},
        )


@dataclass(frozen=True, slots=True)
class EngelPair:
    alpha: KForm
    beta: KForm

    def __post_init__(self):
        if self.alpha.chart != self.beta.chart:
            raise ChartMismatchError("pair forms must share a chart")
        if self.alpha.degree != 1 or self.beta.degree != 1:
            raise DimensionError("pair members must be 1-forms")
        if self.alpha.chart.dim != 4:
            raise DimensionError("pairs live on 4-dimensional charts")

    @property
    def chart(self) -> Chart:
        return self.alpha.chart


# ---------------------------------------------------------------------------
# structure checks


def check_contact_3d(
    alpha: KForm,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> VerificationReport:
    """alpha ^ d(alpha) never vanishes on a 3-chart."""
    if alpha.chart.dim != 3:
        raise DimensionError("contact check requires a 3-dimensional chart")
    if alpha.degree != 1:
        raise DimensionError("contact check requires a 1-form")
    pts = sample_points(alpha.chart, plan)
    top = wedge(alpha, exterior_derivative(alpha))
    vals = form_evaluate_scalar(top, pts)
    return never_vanishing_report("contact_3d", vals, pts, tol)


def check_even_contact(
    beta: KForm,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> VerificationReport:
    """beta ^ d(beta) is a never-vanishing 3-form on a 4-chart."""
    if beta.chart.dim != 4:
        raise DimensionError("even-contact check requires a 4-dimensional chart")
    if beta.degree != 1:
        raise DimensionError("even-contact check requires a 1-form")
    pts = sample_points(beta.chart, plan)
    vals = form_evaluate_scalar(wedge(beta, exterior_derivative(beta)), pts)
    return never_vanishing_report("even_contact", vals, pts, tol)


def _pair_condition_reports(
    alpha: KForm, beta: KForm, pts: np.ndarray, tol: Tolerances
) -> tuple[VerificationReport, VerificationReport, VerificationReport]:
    da = exterior_derivative(alpha)
    db = exterior_derivative(beta)
    ab = wedge(alpha, beta)
    c1 = form_evaluate_scalar(wedge(ab, da), pts)
    c2 = form_evaluate_scalar(wedge(ab, db), pts)
    c3 = form_evaluate_scalar(wedge(beta, db), pts)
    factor_scale = float(
        np.max(
            form_evaluate_scalar(alpha, pts)
            * form_evaluate_scalar(beta, pts)
            * form_evaluate_scalar(db, pts),
            initial=0.0,
        )
    )
    r1 = never_vanishing_report("pair_condition_1", c1, pts, tol)
    r2 = zero_report("pair_condition_2", c2, pts, tol, factor_scale)
    r3 = never_vanishing_report("pair_condition_3", c3, pts, tol)
    return r1, r2, r3


def check_engel_pair(
    pair: EngelPair,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
    auto_orient: bool = False,
) -> VerificationReport:
    """The three pair conditions, evaluated in the given (alpha, beta) order.

    With ``auto_orient`` the swapped order is also evaluated and the notes
    record which ordering satisfies the conditions; the verdict always
    refers to the given order.
    """
    pts = sample_points(pair.chart, plan)
    r1, r2, r3 = _pair_condition_reports(pair.alpha, pair.beta, pts, tol)
    passed = r1.passed and r2.passed and r3.passed
    notes: tuple[str, ...] = ()
    subs = (r1, r2, r3)
    if auto_orient:
        s1, s2, s3 = _pair_condition_reports(pair.beta, pair.alpha, pts, tol)
        swapped = s1.passed and s2.passed and s3.passed
        notes = (
            f"given order (alpha, beta): {'pass' if passed else 'fail'}",
            f"swapped order (beta, alpha): {'pass' if swapped else 'fail'}",
        )
        subs = subs + (
            replace(s1, kind="swapped_" + s1.kind),
            replace(s2, kind="swapped_" + s2.kind),
            replace(s3, kind="swapped_" + s3.kind),
        )
    failing = [r for r in (r1, r2, r3) if not r.passed]
    return VerificationReport(
        kind="engel_pair",
        passed=passed,
        tolerances=tol.as_dict(),
        witnesses={
            "condition1_min_abs": r1.witnesses["min_abs"],
            "condition1_min_over_max": r1.witnesses["min_over_max"],
            "condition1_max_abs": r1.witnesses["max_abs"],
            "condition2_max_abs": r2.witnesses["max_abs"],
            "condition3_min_abs": r3.witnesses["min_abs"],
            "condition3_min_over_max": r3.witnesses["min_over_max"],
        },
        first_failure=failing[0].first_failure if failing else None,
        subreports=subs,
        notes=notes,
    )


def _engel_frame_matrices(
    d: Distribution2, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict[str, VectorField]]:
    xy = lie_bracket(d.x, d.y)
    xxy = lie_bracket(d.x, xy)
    yxy = lie_bracket(d.y, xy)
    cols = {
        "x": d.x.evaluate_at(pts),
        "y": d.y.evaluate_at(pts),
        "xy": xy.evaluate_at(pts),
        "xxy": xxy.evaluate_at(pts),
        "yxy": yxy.evaluate_at(pts),
    }
    m3 = np.stack([cols["x"], cols["y"], cols["xy"]], axis=2)
    m5 = np.stack([cols[k] for k in ("x", "y", "xy", "xxy", "yxy")], axis=2)
    return m3, m5, {"xy": xy, "xxy": xxy, "yxy": yxy}


def check_engel_frame(
    d: Distribution2,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> VerificationReport:
    """Derived-distribution ranks: dim 3 after one bracket, dim 4 after two."""
    if d.chart.dim != 4:
        raise DimensionError("frame check requires a 4-dimensional chart")
    pts = sample_points(d.chart, plan)
    m3, m5, _ = _engel_frame_matrices(d, pts)
    ranks3, ratio3 = matrix_ranks(m3, tol.rank)
    ranks4, ratio4 = matrix_ranks(m5, tol.rank)
    ok3 = bool(np.all(ranks3 == 3))
    ok4 = bool(np.all(ranks4 == 4))
    passed = ok3 and ok4
    first = None
    if not ok3:
        idx = int(np.argmin(ranks3))
        first = _failure_at(pts, idx, rank_step1=ranks3[idx], sv_ratio=ratio3[idx])
    elif not ok4:
        idx = int(np.argmin(ranks4))
        first = _failure_at(pts, idx, rank_step2=ranks4[idx], sv_ratio=ratio4[idx])
    return VerificationReport(
        kind="engel_frame",
        passed=passed,
        tolerances=tol.as_dict(),
        witnesses={
            "rank_step1_min": int(np.min(ranks3)),
            "rank_step1_max": int(np.max(ranks3)),
            "rank_step2_min": int(np.min(ranks4)),
            "rank_step2_max": int(np.max(ranks4)),
            "min_sv_ratio_step1": float(np.min(ratio3)),
            "min_sv_ratio_step2": float(np.min(ratio4)),
        },
        first_failure=first,
        per_point={
            "rank_step1": ranks3,
            "rank_step2": ranks4,
            "sv_ratio_step1": ratio3,
            "sv_ratio_step2": ratio4,
        },
    )


def derived_square(
    d: Distribution2,
    plan: SamplePlan | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[VectorField, VectorField, VectorField]:
    """Frame (X, Y, [X, Y]) of the bracket-extended distribution.

    Raises :class:`RankDeficiencyError` if the three fields drop rank at a
    sample point.
    """
    plan = plan or DEFAULT_PLAN
    pts = sample_points(d.chart, plan)
    xy = lie_bracket(d.x, d.y)
    m3 = np.stack(
        [d.x.evaluate_at(pts), d.y.evaluate_at(pts), xy.evaluate_at(pts)], axis=2
    )
    ranks, ratios = matrix_ranks(m3, tol.rank)
    if not np.all(ranks == 3):
        idx = int(np.argmin(ranks))
        raise RankDeficiencyError(
            f"derived distribution has rank {int(ranks[idx])} at sample point"
            f" {pts[idx].tolist()}"
        )
    return (d.x, d.y, xy)


def annihilator_1form(
    frame: Sequence[VectorField],
    plan: SamplePlan | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> KForm:
    """Symbolic 1-form annihilating a rank-3 frame on a 4-chart.

    Component i is the signed 3x3 minor of the 4x3 component matrix with
    row i removed; the result is verified to annihilate the frame at the
    sample points.
    """
    if len(frame) != 3:
        raise GeometryError("annihilator expects exactly three fields")
    chart = frame[0].chart
    if chart.dim != 4:
        raise DimensionError("annihilator requires a 4-dimensional chart")
    for f in frame[1:]:
        if f.chart != chart:
            raise ChartMismatchError("frame fields on different charts")
    plan = plan or DEFAULT_PLAN
    cols = [f.components for f in frame]

    def det3(rows: list[int]) -> ScalarExpr:
        a = [[cols[c][r] for c in range(3)] for r in rows]
        def mul(p, q):
            return ex.Multiply(p, q)
        t1 = mul(a[0][0], ex.Subtract(mul(a[1][1], a[2][2]), mul(a[1][2], a[2][1])))
        t2 = mul(a[0][1], ex.Subtract(mul(a[1][0], a[2][2]), mul(a[1][2], a[2][0])))
        t3 = mul(a[0][2], ex.Subtract(mul(a[1][0], a[2][1]), mul(a[1][1], a[2][0])))
        return ex.Add(ex.Subtract(t1, t2), t3)

    terms = []
    for i in range(4):
        rows = [r for r in range(4) if r != i]
        minor = det3(rows)
        coeff = simplify(minor if i % 2 == 0 else ex.Negate(minor))
        if coeff != ex.ZERO:
            terms.append(((i,), coeff))
    beta = KForm(chart, 1, tuple(terms))

    pts = sample_points(chart, plan)
    bvals = beta.evaluate_at(pts)
    bnorm = np.linalg.norm(bvals, axis=1)
    if float(np.min(bnorm, initial=np.inf)) <= 0.0:
        idx = int(np.argmin(bnorm))
        raise RankDeficiencyError(
            f"frame drops rank at sample point {pts[idx].tolist()}"
        )
    for f in frame:
        residual = np.abs(
            np.einsum("nd,nd->n", bvals, f.evaluate_at(pts))
        )
        scale = max(1.0, float(np.max(bnorm * np.linalg.norm(f.evaluate_at(pts), axis=1))))
        if np.max(residual) > 1e-10 * scale:
            raise CheckError("annihilator does not annihilate its frame")
    return beta


def characteristic_vector_field(
    beta: KForm,
    volume: KForm,
    plan: SamplePlan | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> VectorField:
    """Solve X . volume = beta ^ d(beta) symbolically on a 4-chart.

    With volume = rho dx0^dx1^dx2^dx3 and beta ^ d(beta) = sum c_J dx^J,
    the component on axis i is (-1)^i c_{complement(i)} / rho; the
    contraction identity is then verified numerically.
    """
    chart = beta.chart
    if chart.dim != 4 or beta.degree != 1:
        raise DimensionError("characteristic field needs a 1-form on a 4-chart")
    if volume.chart != chart or volume.degree != 4:
        raise ChartMismatchError("volume must be a top form on the same chart")
    plan = plan or DEFAULT_PLAN
    pts = sample_points(chart, plan)

    rho = volume.coeff(tuple(range(4)))
    rho_vals = np.abs(ex.evaluate_many(rho, chart.names, pts))
    if float(np.min(rho_vals, initial=np.inf)) <= 0.0:
        idx = int(np.argmin(rho_vals))
        raise CheckError(f"volume form vanishes at sample point {pts[idx].tolist()}")

    bdb = wedge(beta, exterior_derivative(beta))
    comps = []
    for i in range(4):
        comp_key = tuple(j for j in range(4) if j != i)
        c = bdb.coeff(comp_key)
        raw = c if i % 2 == 0 else ex.Negate(c)
        comps.append(simplify(ex.Divide(raw, rho)) if c != ex.ZERO else ex.ZERO)
    x0 = VectorField(chart, tuple(comps))

    lhs = interior_product(x0, volume)
    diff = lhs - bdb
    residual = form_evaluate_scalar(diff, pts)
    scale = max(1.0, float(np.max(form_evaluate_scalar(bdb, pts), initial=0.0)))
    if np.max(residual, initial=0.0) > 1e-10 * scale:
        raise CheckError("contraction identity violated for the computed field")
    return x0


def check_characteristic(
    x0: VectorField,
    beta: KForm,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> VerificationReport:
    """X0 lies in ker(beta) and its flow preserves it: (L_X0 beta)^beta = 0."""
    if x0.chart != beta.chart:
        raise ChartMismatchError("field and form on different charts")
    pts = sample_points(beta.chart, plan)
    lie = lie_derivative_form(x0, beta)
    wedge_vals = form_evaluate_scalar(wedge(lie, beta), pts)
    beta_norm = form_evaluate_scalar(beta, pts)
    lie_norm = form_evaluate_scalar(lie, pts)
    x_norm = np.linalg.norm(x0.evaluate_at(pts), axis=1)
    r_wedge = zero_report(
        "lie_derivative_proportional",
        wedge_vals,
        pts,
        tol,
        float(np.max(lie_norm * beta_norm, initial=0.0)),
    )
    pair_vals = np.abs(ex.evaluate_many(pairing(beta, x0), beta.chart.names, pts))
    r_pair = zero_report(
        "field_in_kernel",
        pair_vals,
        pts,
        tol,
        float(np.max(beta_norm * x_norm, initial=0.0)),
    )
    return VerificationReport(
        kind="characteristic",
        passed=r_wedge.passed and r_pair.passed,
        tolerances=tol.as_dict(),
        witnesses={
            "lie_wedge_max": r_wedge.witnesses["max_abs"],
            "kernel_pairing_max": r_pair.witnesses["max_abs"],
        },
        first_failure=(r_wedge.first_failure or r_pair.first_failure),
        subreports=(r_wedge, r_pair),
    )


def twisting_condition_ranks(
    x0: VectorField,
    v: VectorField,
    plan: SamplePlan,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Pointwise rank of (X0, V, [X0, V]); 3 everywhere is the twisting test."""
    if x0.chart != v.chart:
        raise ChartMismatchError("fields on different charts")
    pts = sample_points(x0.chart, plan)
    b = lie_bracket(x0, v)
    mats = np.stack(
        [x0.evaluate_at(pts), v.evaluate_at(pts), b.evaluate_at(pts)], axis=2
    )
    ranks, _ = matrix_ranks(mats, tol.rank)
    return ranks
