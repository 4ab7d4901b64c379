"""Prolongation of framed contact structures, deprolongation, development.

A framed contact structure on a 3-chart is prolonged to a plane field on
the product with a periodic fiber: the frame is rotated through half the
fiber angle (times the covering index), so one fiber loop sweeps the
projective line of the contact plane n times.  Deprolongation inverts
this: the annihilator of the bracket-extended distribution is restricted
to a cross section.  Development tracks the induced line's angle against
the frame along a fiber, unwrapped modulo pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

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
    base_chart_of,
    coordinate_field,
    lie_bracket,
    lift_to_product,
    product_chart,
    sample_points,
)
from .expr import ScalarExpr, simplify, substitute
from .structures import (
    DEFAULT_PLAN,
    DEFAULT_TOLERANCES,
    CheckError,
    Distribution2,
    Tolerances,
    VerificationReport,
    annihilator_1form,
    check_characteristic,
    check_contact_3d,
    derived_square,
    matrix_ranks,
)

TWO_PI = 2.0 * math.pi


class ProjectionResidualError(GeometryError):
    pass


class RefinementDepthError(GeometryError):
    pass


@dataclass(frozen=True, slots=True)
class ContactFrame:
    """Ordered frame (V0, V1) spanning a contact plane field on a 3-chart."""

    chart: Chart
    v0: VectorField
    v1: VectorField
    positively_oriented: bool = True

    def __post_init__(self):
        if self.chart.dim != 3:
            raise DimensionError("contact frames live on 3-dimensional charts")
        if self.v0.chart != self.chart or self.v1.chart != self.chart:
            raise ChartMismatchError("frame fields must live on the frame chart")

    def validate(
        self, plan: SamplePlan | None = None, tol: Tolerances = DEFAULT_TOLERANCES
    ) -> VerificationReport:
        """Rank 2 of (V0, V1) and rank 3 of (V0, V1, [V0, V1]) at samples."""
        plan = plan or DEFAULT_PLAN
        pts = sample_points(self.chart, plan)
        c0 = self.v0.evaluate_at(pts)
        c1 = self.v1.evaluate_at(pts)
        bracket = lie_bracket(self.v0, self.v1).evaluate_at(pts)
        ranks2, ratio2 = matrix_ranks(np.stack([c0, c1], axis=2), tol.rank)
        ranks3, ratio3 = matrix_ranks(np.stack([c0, c1, bracket], axis=2), tol.rank)
        passed = bool(np.all(ranks2 == 2) and np.all(ranks3 == 3))
        first = None
        if not passed:
            bad = np.where((ranks2 != 2) | (ranks3 != 3))[0]
            idx = int(bad[0])
            first = {
                "point": [float(v) for v in pts[idx]],
                "rank_plane": int(ranks2[idx]),
                "rank_with_bracket": int(ranks3[idx]),
            }
        return VerificationReport(
            kind="contact_frame",
            passed=passed,
            tolerances=tol.as_dict(),
            witnesses={
                "min_sv_ratio_plane": float(np.min(ratio2)),
                "min_sv_ratio_bracket": float(np.min(ratio3)),
            },
            first_failure=first,
            per_point={
                "rank_plane": ranks2,
                "rank_with_bracket": ranks3,
                "sv_ratio_plane": ratio2,
                "sv_ratio_bracket": ratio3,
            },
        )

    def basis_at(self, base_point: np.ndarray) -> np.ndarray:
        """3x2 matrix with V0, V1 as columns at a base point."""
        p = np.asarray(base_point, dtype=float)[None, :]
        return np.stack(
            [self.v0.evaluate_at(p)[0], self.v1.evaluate_at(p)[0]], axis=1
        )


@dataclass(frozen=True, slots=True)
class ProlongedEngel:
    """Plane field {fiber direction, rotating frame combination} on base x S^1."""

    chart: Chart
    n: int
    frame: ContactFrame
    fiber_field: VectorField
    twist_field: VectorField
    coefficients: tuple[ScalarExpr, ScalarExpr]

    @property
    def distribution(self) -> Distribution2:
        return Distribution2(
            self.chart,
            self.fiber_field,
            self.twist_field,
            legendrian_coefficients=self.coefficients,
        )


def prolong(
    frame: ContactFrame,
    n: int,
    plan: SamplePlan | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
    fiber_name: str = "theta",
    verify: bool = True,
) -> ProlongedEngel:
    """n-fold fiberwise prolongation of a framed contact structure.

    Returns the frame {d/dtheta, cos(n*theta/2)*V0 + sin(n*theta/2)*V1} on
    the product chart with theta periodic of period 2*pi.
    """
    if not isinstance(n, int) or n < 1:
        raise GeometryError("covering index must be a positive integer")
    if verify:
        frame.validate(plan, tol).require("contact frame validation")
    while fiber_name in frame.chart.names:
        fiber_name = fiber_name + "_"
    chart4 = product_chart(frame.chart, fiber_name, 0.0, TWO_PI, periodic=True)
    theta = ex.Variable(fiber_name)
    half_angle = simplify(ex.Divide(ex.Multiply(ex.Constant(n), theta), ex.Constant(2)))
    a = ex.Cos(half_angle)
    b = ex.Sin(half_angle)
    v0l = lift_to_product(frame.v0, chart4)
    v1l = lift_to_product(frame.v1, chart4)
    twist = v0l.scaled_by(a) + v1l.scaled_by(b)
    return ProlongedEngel(
        chart=chart4,
        n=n,
        frame=frame,
        fiber_field=coordinate_field(chart4, fiber_name),
        twist_field=twist,
        coefficients=(a, b),
    )


def fiber_characteristic_annihilator(
    d: Distribution2, plan: SamplePlan, tol: Tolerances = DEFAULT_TOLERANCES
) -> KForm:
    """Annihilator of the bracket-extended frame, verified to single out the
    fiber direction: it must have no fiber component and the fiber field
    must satisfy the characteristic conditions against it."""
    chart = d.chart
    if chart.fiber is None:
        raise GeometryError("distribution chart has no fiber coordinate")
    frame3 = derived_square(d, plan, tol)
    beta = annihilator_1form(frame3, plan, tol)
    fiber_idx = chart.index(chart.fiber)
    fiber_coeff = simplify(beta.coeff((fiber_idx,)))
    if fiber_coeff != ex.ZERO:
        vals = np.abs(ex.evaluate_many(fiber_coeff, chart.names, sample_points(chart, plan)))
        scale = max(
            1.0,
            float(np.max(np.linalg.norm(beta.evaluate_at(sample_points(chart, plan)), axis=1))),
        )
        if np.max(vals, initial=0.0) > tol.zero * scale:
            raise CheckError(
                "characteristic direction is not the fiber field"
                " (annihilator has a fiber component)"
            )
    check_characteristic(coordinate_field(chart, chart.fiber), beta, plan, tol).require(
        "fiber-direction characteristic check"
    )
    return beta


def deprolong(
    d: Distribution2,
    section_value: float,
    plan: SamplePlan | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> KForm:
    """Contact form induced on the cross section {fiber = section_value}.

    Computes the annihilator of the bracket-extended distribution, checks
    that the characteristic direction is the fiber, substitutes the fiber
    coordinate, and verifies the result is contact on the base chart.
    """
    plan = plan or DEFAULT_PLAN
    beta = fiber_characteristic_annihilator(d, plan, tol)
    chart = d.chart
    base = base_chart_of(chart)
    terms = []
    for (i,), coeff in beta.terms:
        name = chart.names[i]
        if name == chart.fiber:
            continue
        restricted = simplify(substitute(coeff, chart.fiber, float(section_value)))
        if restricted != ex.ZERO:
            terms.append(((base.index(name),), restricted))
    alpha = KForm(base, 1, tuple(terms))
    check_contact_3d(alpha, plan, tol).require("deprolonged form contact check")
    return alpha


# ---------------------------------------------------------------------------
# development


def _wrap_half_pi(delta: np.ndarray) -> np.ndarray:
    """Reduce angle increments mod pi into [-pi/2, pi/2)."""
    return (delta + math.pi / 2.0) % math.pi - math.pi / 2.0


def _raw_angles(
    d: Distribution2,
    frame: ContactFrame,
    base_point: np.ndarray,
    fiber_values: np.ndarray,
    tol: Tolerances,
) -> np.ndarray:
    """Angle mod pi of the fiber-free generator against (V0, V1)."""
    chart = d.chart
    if chart.fiber is None:
        raise GeometryError("distribution chart has no fiber coordinate")
    fiber_idx = chart.index(chart.fiber)
    base_idx = [i for i in range(chart.dim) if i != fiber_idx]

    pts = np.empty((fiber_values.size, chart.dim))
    pts[:, base_idx] = np.asarray(base_point, dtype=float)[None, :]
    pts[:, fiber_idx] = fiber_values

    xv = d.x.evaluate_at(pts)
    yv = d.y.evaluate_at(pts)
    xf = xv[:, fiber_idx]
    yf = yv[:, fiber_idx]
    # eliminate the fiber component against the more fiber-like generator
    use_x = np.abs(xf) >= np.abs(yf)
    pivot = np.where(use_x, xf, yf)
    if np.any(pivot == 0.0):
        raise GeometryError("frame has no generator transverse to the base")
    ratio = np.where(use_x, yf, xf) / pivot
    w = np.where(use_x[:, None], yv - ratio[:, None] * xv, xv - ratio[:, None] * yv)
    wb = w[:, base_idx]

    basis = frame.basis_at(base_point)
    coeffs, _, _, _ = np.linalg.lstsq(basis, wb.T, rcond=None)
    residual = np.linalg.norm(basis @ coeffs - wb.T, axis=0)
    wnorm = np.linalg.norm(wb, axis=1)
    if np.any(wnorm <= 0.0):
        raise GeometryError("degenerate generator along the fiber")
    rel = residual / wnorm
    if np.max(rel) > tol.projection:
        raise ProjectionResidualError(
            f"projection onto the frame leaves relative residual {np.max(rel):.3e}"
            f" > {tol.projection:.1e}"
        )
    angles = np.arctan2(coeffs[1], coeffs[0]) % math.pi
    if not frame.positively_oriented:
        angles = (-angles) % math.pi
    return angles


def _unwrap(raw: np.ndarray) -> np.ndarray:
    start = raw[0] % math.pi
    deltas = _wrap_half_pi(np.diff(raw))
    return start + np.concatenate([[0.0], np.cumsum(deltas)])


MAX_PROFILE_POINTS = 1 << 18


def development_profile(
    d: Distribution2,
    frame: ContactFrame,
    base_point,
    fiber_values,
    tol: Tolerances = DEFAULT_TOLERANCES,
    max_refine: int = 24,
) -> tuple[np.ndarray, np.ndarray]:
    """Unwrapped development angles along one fiber.

    Returns (fiber_values, angles) after step refinement: wherever two
    consecutive raw angles differ by pi/4 or more (mod pi) a midpoint is
    inserted, so genuine increments stay below the pi/2 aliasing bound.
    Refinement is bounded both in depth and in total point count.

    Refinement cannot detect increments that alias to a clean multiple of
    pi, so the input grid must already resolve the twisting (64 steps per
    covering index is ample for the structures built here).
    """
    t = np.asarray(fiber_values, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise GeometryError("need at least two fiber values")
    base_point = np.asarray(base_point, dtype=float)
    raw = _raw_angles(d, frame, base_point, t, tol)
    for _ in range(max_refine):
        deltas = np.abs(_wrap_half_pi(np.diff(raw)))
        bad = np.where(deltas >= math.pi / 4.0)[0]
        if bad.size == 0:
            return t, _unwrap(raw)
        if t.size + bad.size > MAX_PROFILE_POINTS:
            break
        mids = (t[bad] + t[bad + 1]) / 2.0
        t = np.sort(np.concatenate([t, mids]))
        raw = _raw_angles(d, frame, base_point, t, tol)
    raise RefinementDepthError(
        "development refinement exceeded the resolution budget;"
        " the field twists too fast for the requested fiber grid"
    )


def _default_fiber_grid(chart: Chart, t_end: float, min_steps: int) -> np.ndarray:
    axis = chart.axis(chart.fiber)
    span = abs(t_end - axis.lo)
    steps = max(min_steps, int(math.ceil(64 * span / TWO_PI)) * 4)
    return np.linspace(axis.lo, t_end, steps + 1)


def development_angle(
    d: Distribution2,
    frame: ContactFrame,
    base_point,
    t: float,
    tol: Tolerances = DEFAULT_TOLERANCES,
    min_steps: int = 256,
) -> float:
    """Unwrapped development angle at fiber value ``t``.

    The angle at the fiber start lies in [0, pi) and is tracked
    continuously up to ``t``; one projective loop of the induced line
    contributes pi.
    """
    chart = d.chart
    if chart.fiber is None:
        raise GeometryError("distribution chart has no fiber coordinate")
    axis = chart.axis(chart.fiber)
    if t == axis.lo:
        grid = np.array([axis.lo, axis.lo + 1e-9])
        _, angles = development_profile(d, frame, base_point, grid, tol)
        return float(angles[0])
    grid = _default_fiber_grid(chart, float(t), min_steps)
    _, angles = development_profile(d, frame, base_point, grid, tol)
    return float(angles[-1])


def develop_section(
    frame: ContactFrame,
    g: ScalarExpr,
    n: int,
    plan: SamplePlan | None = None,
) -> ScalarExpr:
    """Graph function g + n*pi of the developed end section.

    The start section develops to the zero graph; ``g`` must satisfy
    0 < min g <= pi over the sample set.
    """
    if not isinstance(n, int) or n < 0:
        raise GeometryError("twist count must be a non-negative integer")
    plan = plan or DEFAULT_PLAN
    pts = sample_points(frame.chart, plan)
    vals = ex.evaluate_many(g, frame.chart.names, pts)
    gmin = float(np.min(vals))
    if not 0.0 < gmin <= math.pi + 1e-12:
        raise GeometryError(
            f"angle function must satisfy 0 < min g <= pi, got min {gmin}"
        )
    if n == 0:
        return simplify(g)
    return simplify(ex.Add(g, ex.Multiply(ex.Constant(n), ex.PI)))
