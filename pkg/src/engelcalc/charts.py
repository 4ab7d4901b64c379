"""Coordinate charts, vector fields, differential forms, and their calculus.

Charts model trivialized products (boxes in R^3/R^4, tori, cylinders):
named coordinates with a sampling interval each, and optional periodicity.
Forms are stored sparsely over strictly increasing index tuples; all sign
bookkeeping happens in ``wedge``/``interior_product``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import ScalarExpr, as_expr, simplify


class GeometryError(ValueError):
    """Base class for chart/field/form failures."""


class ChartMismatchError(GeometryError):
    pass


class DimensionError(GeometryError):
    pass


@dataclass(frozen=True, slots=True)
class CoordinateAxis:
    name: str
    lo: float
    hi: float
    periodic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not self.hi > self.lo:
            raise GeometryError(
                f"axis '{self.name}' needs hi > lo, got [{self.lo}, {self.hi}]"
            )

    @property
    def period(self) -> float:
        # periodic axes sample one full period [lo, hi)
        return self.hi - self.lo


@dataclass(frozen=True, slots=True)
class Chart:
    axes: tuple[CoordinateAxis, ...]
    fiber: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise GeometryError(f"coordinate names must be distinct: {names}")
        if not 3 <= len(names) <= 4:
            raise DimensionError(f"chart dimension must be 3 or 4, got {len(names)}")
        if self.fiber is not None and self.fiber not in names:
            raise GeometryError(f"fiber '{self.fiber}' is not a coordinate")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GeometryError(f"no coordinate '{name}' on this chart") from None

    def axis(self, name: str) -> CoordinateAxis:
        return self.axes[self.index(name)]

    def parse(self, text: str) -> ScalarExpr:
        return ex.parse_scalar_expr(text, self.names)


def chart_from_box(
    bounds: Mapping[str, tuple[float, float]],
    periodic: Iterable[str] = (),
    fiber: str | None = None,
) -> Chart:
    per = set(periodic)
    axes = tuple(
        CoordinateAxis(n, lo, hi, periodic=n in per) for n, (lo, hi) in bounds.items()
    )
    return Chart(axes, fiber=fiber)


def product_chart(
    base: Chart, name: str, lo: float, hi: float, periodic: bool = False
) -> Chart:
    """Append a fiber coordinate to a 3-chart."""
    if base.dim != 3:
        raise DimensionError("product charts extend a 3-dimensional base")
    if name in base.names:
        raise GeometryError(f"fiber name '{name}' collides with a base coordinate")
    return Chart(base.axes + (CoordinateAxis(name, lo, hi, periodic),), fiber=name)


def base_chart_of(chart: Chart) -> Chart:
    """Drop the fiber axis of a product chart."""
    if chart.fiber is None:
        raise GeometryError("chart has no fiber coordinate")
    axes = tuple(a for a in chart.axes if a.name != chart.fiber)
    return Chart(axes, fiber=None)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, slots=True)
class SamplePlan:
    """Deterministic grid plus seeded uniform-random points."""

    grid: int | tuple[int, ...] = 5
    random: int = 0
    seed: int = 0

    def __post_init__(self):
        res = self.grid if isinstance(self.grid, tuple) else (self.grid,)
        if any(int(r) < 2 for r in res):
            raise GeometryError("grid resolutions must be >= 2")
        if self.random < 0:
            raise GeometryError("random count must be >= 0")

    def resolutions(self, dim: int) -> tuple[int, ...]:
        if isinstance(self.grid, tuple):
            if len(self.grid) != dim:
                raise GeometryError(
                    f"grid tuple has {len(self.grid)} entries for a {dim}-chart"
                )
            return self.grid
        return (self.grid,) * dim


def sample_points(chart: Chart, plan: SamplePlan) -> np.ndarray:
    """Ordered sample array of shape (n, dim): grid rows first, then random."""
    res = plan.resolutions(chart.dim)
    lines = []
    for axis, r in zip(chart.axes, res):
        if axis.periodic:
            lines.append(axis.lo + axis.period * np.arange(r) / r)
        else:
            lines.append(np.linspace(axis.lo, axis.hi, r))
    grids = np.meshgrid(*lines, indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    if plan.random > 0:
        rng = np.random.default_rng(plan.seed)
        lo = np.array([a.lo for a in chart.axes])
        hi = np.array([a.hi for a in chart.axes])
        rand = lo + (hi - lo) * rng.random((plan.random, chart.dim))
        pts = np.vstack([pts, rand])
    return pts


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True, slots=True)
class VectorField:
    chart: Chart
    components: tuple[ScalarExpr, ...]

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.chart.dim:
            raise GeometryError(
                f"field needs {self.chart.dim} components, got {len(comps)}"
            )
        allowed = set(self.chart.names)
        for c in comps:
            extra = ex.free_variables(c) - allowed
            if extra:
                raise GeometryError(f"component uses unknown variables {sorted(extra)}")

    def evaluate_at(self, points: np.ndarray, backend: str | None = None) -> np.ndarray:
        cols = [
            ex.evaluate_many(c, self.chart.names, points, backend)
            for c in self.components
        ]
        return np.stack(cols, axis=1)

    def simplified(self) -> "VectorField":
        return VectorField(self.chart, tuple(simplify(c) for c in self.components))

    def scaled_by(self, factor) -> "VectorField":
        f = as_expr(factor)
        return VectorField(
            self.chart, tuple(simplify(ex.Multiply(f, c)) for c in self.components)
        )

    def __add__(self, other: "VectorField") -> "VectorField":
        _require_same_chart(self, other)
        return VectorField(
            self.chart,
            tuple(
                simplify(ex.Add(a, b))
                for a, b in zip(self.components, other.components)
            ),
        )


def vector_field(chart: Chart, components: Sequence) -> VectorField:
    comps = tuple(
        chart.parse(c) if isinstance(c, str) else as_expr(c) for c in components
    )
    return VectorField(chart, comps)


def coordinate_field(chart: Chart, name: str) -> VectorField:
    i = chart.index(name)
    comps = tuple(ex.ONE if j == i else ex.ZERO for j in range(chart.dim))
    return VectorField(chart, comps)


def lift_to_product(field: VectorField, chart: Chart) -> VectorField:
    """Reinterpret a base-chart field on a product chart (zero fiber part)."""
    if chart.fiber is None:
        raise GeometryError("target chart has no fiber coordinate")
    base_names = tuple(n for n in chart.names if n != chart.fiber)
    if field.chart.names != base_names:
        raise ChartMismatchError(
            f"field coordinates {field.chart.names} do not match base {base_names}"
        )
    comp_by_name = dict(zip(field.chart.names, field.components))
    comps = tuple(
        comp_by_name[n] if n != chart.fiber else ex.ZERO for n in chart.names
    )
    return VectorField(chart, comps)


def _require_same_chart(a, b) -> None:
    if a.chart != b.chart:
        raise ChartMismatchError("operands live on different charts")


# ---------------------------------------------------------------------------
# differential forms


@dataclass(frozen=True, slots=True)
class KForm:
    chart: Chart
    degree: int
    terms: tuple[tuple[tuple[int, ...], ScalarExpr], ...] = ()

    def __post_init__(self):
        if not 0 <= self.degree <= self.chart.dim:
            raise DimensionError(
                f"degree {self.degree} invalid on a {self.chart.dim}-chart"
            )
        cleaned = []
        seen = set()
        for key, coeff in self.terms:
            key = tuple(int(i) for i in key)
            if len(key) != self.degree:
                raise GeometryError(f"index tuple {key} has wrong length")
            if any(not 0 <= i < self.chart.dim for i in key):
                raise GeometryError(f"index tuple {key} out of range")
            if any(a >= b for a, b in zip(key, key[1:])):
                raise GeometryError(f"index tuple {key} must be strictly increasing")
            if key in seen:
                raise GeometryError(f"duplicate index tuple {key}")
            seen.add(key)
            coeff = as_expr(coeff)
            if coeff != ex.ZERO:
                cleaned.append((key, coeff))
        cleaned.sort(key=lambda kv: kv[0])
        object.__setattr__(self, "terms", tuple(cleaned))

    @property
    def keys(self) -> tuple[tuple[int, ...], ...]:
        return tuple(k for k, _ in self.terms)

    def coeff(self, key: tuple[int, ...]) -> ScalarExpr:
        for k, c in self.terms:
            if k == tuple(key):
                return c
        return ex.ZERO

    def coeff_by_names(self, names: Sequence[str]) -> ScalarExpr:
        return self.coeff(tuple(self.chart.index(n) for n in names))

    def all_keys(self) -> tuple[tuple[int, ...], ...]:
        return tuple(itertools.combinations(range(self.chart.dim), self.degree))

    def evaluate_at(self, points: np.ndarray, backend: str | None = None) -> np.ndarray:
        """Coefficient matrix (n, n_keys) over the full increasing-key list."""
        cols = []
        for key in self.all_keys():
            c = self.coeff(key)
            if c == ex.ZERO:
                cols.append(np.zeros(points.shape[0]))
            else:
                cols.append(ex.evaluate_many(c, self.chart.names, points, backend))
        if not cols:
            return np.zeros((points.shape[0], 0))
        return np.stack(cols, axis=1)

    def simplified(self) -> "KForm":
        return KForm(
            self.chart, self.degree, tuple((k, simplify(c)) for k, c in self.terms)
        )

    def scaled_by(self, factor) -> "KForm":
        f = as_expr(factor)
        return KForm(
            self.chart,
            self.degree,
            tuple((k, simplify(ex.Multiply(f, c))) for k, c in self.terms),
        )

    def __add__(self, other: "KForm") -> "KForm":
        _require_same_chart(self, other)
        if self.degree != other.degree:
            raise DimensionError("cannot add forms of different degree")
        acc: dict[tuple[int, ...], ScalarExpr] = {k: c for k, c in self.terms}
        for k, c in other.terms:
            acc[k] = ex.Add(acc[k], c) if k in acc else c
        return KForm(
            self.chart, self.degree, tuple((k, simplify(c)) for k, c in acc.items())
        )

    def __sub__(self, other: "KForm") -> "KForm":
        return self + other.scaled_by(-1.0)


def one_form(chart: Chart, coeffs: Mapping[str, object]) -> KForm:
    terms = []
    for name, c in coeffs.items():
        e = chart.parse(c) if isinstance(c, str) else as_expr(c)
        terms.append(((chart.index(name),), e))
    return KForm(chart, 1, tuple(terms))


def volume_form(chart: Chart, density=1.0) -> KForm:
    key = tuple(range(chart.dim))
    return KForm(chart, chart.dim, (((key), as_expr(density)),))


def form_evaluate_scalar(form: KForm, points: np.ndarray) -> np.ndarray:
    """Pointwise 2-norm of the coefficient vector."""
    vals = form.evaluate_at(points)
    if vals.shape[1] == 0:
        return np.zeros(points.shape[0])
    return np.linalg.norm(vals, axis=1)


# ---------------------------------------------------------------------------
# exterior calculus


def lie_bracket(x: VectorField, y: VectorField) -> VectorField:
    """[X, Y]^i = sum_j X^j d_j Y^i - Y^j d_j X^i, simplified."""
    _require_same_chart(x, y)
    names = x.chart.names
    comps = []
    for i in range(x.chart.dim):
        acc: ScalarExpr = ex.ZERO
        for j, nj in enumerate(names):
            acc = ex.Add(
                acc,
                ex.Subtract(
                    ex.Multiply(x.components[j], ex.partial_derivative(y.components[i], nj)),
                    ex.Multiply(y.components[j], ex.partial_derivative(x.components[i], nj)),
                ),
            )
        comps.append(simplify(acc))
    return VectorField(x.chart, tuple(comps))


def fd_lie_bracket(
    x: VectorField, y: VectorField, p: Sequence[float], h: float
) -> np.ndarray:
    """Bracket with every partial replaced by a central difference of step h.

    Independent numeric oracle for :func:`lie_bracket`; second-order in h.
    """
    _require_same_chart(x, y)
    if h <= 0:
        raise GeometryError("finite-difference step must be positive")
    p = np.asarray(p, dtype=float)
    dim = x.chart.dim
    shifted = np.repeat(p[None, :], 2 * dim + 1, axis=0)
    for j in range(dim):
        shifted[2 * j, j] += h
        shifted[2 * j + 1, j] -= h
    xv = x.evaluate_at(shifted)
    yv = y.evaluate_at(shifted)
    x0, y0 = xv[-1], yv[-1]
    out = np.zeros(dim)
    for j in range(dim):
        dy_j = (yv[2 * j] - yv[2 * j + 1]) / (2 * h)
        dx_j = (xv[2 * j] - xv[2 * j + 1]) / (2 * h)
        out += x0[j] * dy_j - y0[j] * dx_j
    return out


def _insertion_sign(i: int, key: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    """Insert index i into a sorted tuple; sign is (-1)^position."""
    pos = 0
    while pos < len(key) and key[pos] < i:
        pos += 1
    return (-1) ** pos, key[:pos] + (i,) + key[pos:]


def exterior_derivative(form: KForm) -> KForm:
    if form.degree >= form.chart.dim:
        raise DimensionError("exterior derivative would exceed the chart dimension")
    names = form.chart.names
    acc: dict[tuple[int, ...], ScalarExpr] = {}
    for key, coeff in form.terms:
        for j in range(form.chart.dim):
            if j in key:
                continue
            d = ex.partial_derivative(coeff, names[j])
            if d == ex.ZERO:
                continue
            sign, newkey = _insertion_sign(j, key)
            term = d if sign > 0 else ex.Negate(d)
            acc[newkey] = ex.Add(acc[newkey], term) if newkey in acc else term
    return KForm(
        form.chart,
        form.degree + 1,
        tuple((k, simplify(c)) for k, c in acc.items()),
    )


def _merge_sign(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, tuple[int, ...]] | None:
    """Sign of sorting the concatenation a+b; None if they overlap."""
    if set(a) & set(b):
        return None
    sign = 1
    merged = list(a)
    for i in b:
        pos = 0
        while pos < len(merged) and merged[pos] < i:
            pos += 1
        sign *= (-1) ** (len(merged) - pos)
        merged.insert(pos, i)
    return sign, tuple(merged)


def wedge(a: KForm, b: KForm) -> KForm:
    _require_same_chart(a, b)
    if a.degree + b.degree > a.chart.dim:
        raise DimensionError("wedge degree exceeds the chart dimension")
    acc: dict[tuple[int, ...], ScalarExpr] = {}
    for ka, ca in a.terms:
        for kb, cb in b.terms:
            merged = _merge_sign(ka, kb)
            if merged is None:
                continue
            sign, key = merged
            term = ex.Multiply(ca, cb)
            if sign < 0:
                term = ex.Negate(term)
            acc[key] = ex.Add(acc[key], term) if key in acc else term
    return KForm(
        a.chart, a.degree + b.degree, tuple((k, simplify(c)) for k, c in acc.items())
    )


def interior_product(x: VectorField, form: KForm) -> KForm:
    """Contraction in the first slot."""
    _require_same_chart(x, form)
    if form.degree < 1:
        raise DimensionError("interior product needs degree >= 1")
    acc: dict[tuple[int, ...], ScalarExpr] = {}
    for key, coeff in form.terms:
        for pos, i in enumerate(key):
            rest = key[:pos] + key[pos + 1 :]
            term = ex.Multiply(x.components[i], coeff)
            if pos % 2 == 1:
                term = ex.Negate(term)
            acc[rest] = ex.Add(acc[rest], term) if rest in acc else term
    return KForm(
        form.chart, form.degree - 1, tuple((k, simplify(c)) for k, c in acc.items())
    )


def differential(chart: Chart, scalar: ScalarExpr) -> KForm:
    """d of a 0-form."""
    terms = []
    for j, name in enumerate(chart.names):
        d = ex.partial_derivative(scalar, name)
        if d != ex.ZERO:
            terms.append(((j,), d))
    return KForm(chart, 1, tuple(terms))


def lie_derivative_form(x: VectorField, form: KForm) -> KForm:
    """Cartan formula: X . d(form) + d(X . form)."""
    _require_same_chart(x, form)
    if form.degree == 0:
        # L_X f = X(f); the contraction term has no degree -1 home
        f = form.coeff(())
        acc: ScalarExpr = ex.ZERO
        for j, name in enumerate(x.chart.names):
            acc = ex.Add(acc, ex.Multiply(x.components[j], ex.partial_derivative(f, name)))
        return KForm(x.chart, 0, (((), simplify(acc)),))
    first = interior_product(x, exterior_derivative(form)) if form.degree < form.chart.dim else KForm(form.chart, form.degree, ())
    inner = interior_product(x, form)
    second = exterior_derivative(inner)
    return first + second


def pairing(form: KForm, x: VectorField) -> ScalarExpr:
    """beta(X) for a 1-form."""
    if form.degree != 1:
        raise DimensionError("pairing needs a 1-form")
    _require_same_chart(form, x)
    acc: ScalarExpr = ex.ZERO
    for (i,), c in form.terms:
        acc = ex.Add(acc, ex.Multiply(c, x.components[i]))
    return simplify(acc)


def parse_one_form(chart: Chart, text: str) -> KForm:
    """Parse 1-form syntax like ``dy - z*dx`` or ``cos(z)*dx - sin(z)*dy``.

    The differentials ``d<coord>`` act as extra identifiers; the expression
    must be linear in them with no scalar part, which is verified by
    symbolic cancellation.
    """
    dnames = tuple("d" + n for n in chart.names)
    if set(dnames) & set(chart.names):
        raise GeometryError("coordinate names collide with differential names")
    e = ex.parse_scalar_expr(text, set(chart.names) | set(dnames))
    scalar_part = e
    for dn in dnames:
        scalar_part = ex.substitute(scalar_part, dn, 0.0)
    if simplify(scalar_part) != ex.ZERO:
        raise GeometryError(f"form expression {text!r} has a scalar part")
    coeffs = []
    for i in range(chart.dim):
        sub = e
        for j, dn in enumerate(dnames):
            sub = ex.substitute(sub, dn, 1.0 if i == j else 0.0)
        coeffs.append(simplify(sub))
    residual = e
    for dn, c in zip(dnames, coeffs):
        residual = ex.Subtract(residual, ex.Multiply(ex.Variable(dn), c))
    if simplify(residual) != ex.ZERO:
        raise GeometryError(
            f"form expression {text!r} must be linear in the differentials"
        )
    terms = tuple(((i,), c) for i, c in enumerate(coeffs) if c != ex.ZERO)
    return KForm(chart, 1, terms)


def one_form_to_text(form: KForm) -> str:
    """Inverse of :func:`parse_one_form` (round-trips through the parser)."""
    if form.degree != 1:
        raise DimensionError("only 1-forms serialize to form syntax")
    if not form.terms:
        return "0*d" + form.chart.names[0]
    parts = []
    for (i,), coeff in form.terms:
        dn = "d" + form.chart.names[i]
        if coeff == ex.ONE:
            parts.append(dn)
        else:
            parts.append(f"({ex.to_text(coeff)})*{dn}")
    return " + ".join(parts)


# ---------------------------------------------------------------------------
# periodicity respect


def period_respect_mismatch(
    obj: VectorField | KForm, plan: SamplePlan
) -> float:
    """Max |value(c) - value(c + period)| over samples and periodic axes.

    Component expressions must already be built from period-respecting
    functions of the periodic coordinates; this measures the violation.
    """
    chart = obj.chart
    pts = sample_points(chart, plan)
    worst = 0.0
    for j, axis in enumerate(chart.axes):
        if not axis.periodic:
            continue
        shifted = pts.copy()
        shifted[:, j] += axis.period
        a = obj.evaluate_at(pts)
        b = obj.evaluate_at(shifted)
        worst = max(worst, float(np.max(np.abs(a - b), initial=0.0)))
    return worst
