"""Manifest files: declarative structure definitions and task lists.

The format is line-oriented with bracketed section headers::

    [chart]
    coords = x y z w
    box x = -1 1            # constant expressions; pi is allowed
    periodic theta = 2*pi   # sampled over [0, period)
    fiber = theta           # optional

    [sampling]
    grid = 5
    random = 200
    seed = 0

    [tolerances]            # optional overrides
    rank = 1e-7

    [define]
    expr g = pi/2
    field V0 = 0; 0; 1      # one component per coordinate
    form alpha = dy - z*dx

    [structure NAME]
    kind = contact | even_contact | engel_pair | engel_frame |
           contact_frame | prolongation | extension | extension_family
    ...kind-specific keys referencing earlier definitions...

    [task ID]
    kind = verify | invariant | identities | construct
    target = NAME
    invariant = twisting_number | minimal_twisting_number
    expect = 3              # optional expectation for invariant tasks

Every referenced name must be defined before use; validation errors carry
the offending line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

from . import expr as ex
from .charts import (
    Chart,
    CoordinateAxis,
    GeometryError,
    KForm,
    SamplePlan,
    VectorField,
    parse_one_form,
    vector_field,
)
from .expr import ScalarExpr
from .structures import Distribution2, EngelPair, Tolerances


class ManifestError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class StructureDecl:
    name: str
    kind: str
    options: dict[str, str]
    line: int


@dataclass(frozen=True)
class TaskDecl:
    task_id: str
    kind: str
    options: dict[str, str]
    line: int


@dataclass(frozen=True)
class Manifest:
    chart: Chart
    definitions: dict[str, object]
    structures: dict[str, StructureDecl]
    tasks: tuple[TaskDecl, ...]
    sampling: SamplePlan
    tolerances: Tolerances
    digest: str

    def with_overrides(
        self,
        grid: int | None = None,
        random: int | None = None,
        seed: int | None = None,
        tol_rank: float | None = None,
        tol_zero: float | None = None,
    ) -> "Manifest":
        plan = self.sampling
        plan = SamplePlan(
            grid=grid if grid is not None else plan.grid,
            random=random if random is not None else plan.random,
            seed=seed if seed is not None else plan.seed,
        )
        tol = self.tolerances
        if tol_rank is not None:
            tol = replace(tol, rank=tol_rank)
        if tol_zero is not None:
            tol = replace(tol, zero=tol_zero)
        return replace(self, sampling=plan, tolerances=tol)


_STRUCTURE_KINDS = {
    "contact",
    "even_contact",
    "engel_pair",
    "engel_frame",
    "contact_frame",
    "prolongation",
    "extension",
    "extension_family",
}
_TASK_KINDS = {"verify", "invariant", "identities", "construct"}


def _strip(line: str) -> str:
    if "#" in line:
        line = line[: line.index("#")]
    return line.strip()


def _const_value(text: str, line: int) -> float:
    try:
        return ex.evaluate(ex.parse_scalar_expr(text, ()), {})
    except ex.ExprError as err:
        raise ManifestError(f"bad constant expression {text!r}: {err}", line) from err


def parse_manifest(text: str) -> Manifest:
    """Parse and validate; raises :class:`ManifestError` at the first defect."""
    sections: list[tuple[str, str, int, list[tuple[str, str, int]]]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ManifestError("unterminated section header", lineno)
            inner = line[1:-1].strip()
            parts = inner.split(None, 1)
            kind = parts[0]
            label = parts[1].strip() if len(parts) > 1 else ""
            current = (kind, label, lineno, [])
            sections.append(current)
            continue
        if current is None:
            raise ManifestError("entry outside any section", lineno)
        if "=" not in line:
            raise ManifestError(f"expected 'key = value', got {line!r}", lineno)
        key, value = line.split("=", 1)
        current[3].append((key.strip(), value.strip(), lineno))

    chart = None
    sampling = SamplePlan(grid=4, random=32, seed=0)
    tolerances = Tolerances()
    definitions: dict[str, object] = {}
    structures: dict[str, StructureDecl] = {}
    tasks: list[TaskDecl] = []

    for kind, label, header_line, entries in sections:
        if kind == "chart":
            chart = _parse_chart(entries, header_line)
        elif kind == "sampling":
            sampling = _parse_sampling(entries, sampling)
        elif kind == "tolerances":
            tolerances = _parse_tolerances(entries, tolerances)
        elif kind == "define":
            if chart is None:
                raise ManifestError("[define] requires a preceding [chart]", header_line)
            _parse_definitions(chart, entries, definitions)
        elif kind == "structure":
            if chart is None:
                raise ManifestError(
                    "[structure] requires a preceding [chart]", header_line
                )
            if not label:
                raise ManifestError("structure sections need a name", header_line)
            if label in structures:
                raise ManifestError(f"duplicate structure '{label}'", header_line)
            decl = _parse_structure(chart, label, entries, definitions, header_line)
            structures[label] = decl
        elif kind == "task":
            if not label:
                raise ManifestError("task sections need an id", header_line)
            tasks.append(_parse_task(label, entries, structures, header_line))
        else:
            raise ManifestError(f"unknown section kind '{kind}'", header_line)

    if chart is None:
        raise ManifestError("manifest has no [chart] section", 1)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return Manifest(
        chart=chart,
        definitions=definitions,
        structures=structures,
        tasks=tuple(tasks),
        sampling=sampling,
        tolerances=tolerances,
        digest=digest,
    )


def _parse_chart(entries, header_line) -> Chart:
    coords: list[str] = []
    axes_spec: dict[str, tuple[float, float, bool]] = {}
    fiber = None
    for key, value, lineno in entries:
        words = key.split()
        if key == "coords":
            coords = value.split()
        elif words[0] == "box" and len(words) == 2:
            bounds = value.split()
            if len(bounds) != 2:
                raise ManifestError("box needs 'lo hi'", lineno)
            lo = _const_value(bounds[0], lineno)
            hi = _const_value(bounds[1], lineno)
            axes_spec[words[1]] = (lo, hi, False)
        elif words[0] == "periodic" and len(words) == 2:
            period = _const_value(value, lineno)
            if period <= 0:
                raise ManifestError(
                    f"periodic coordinate '{words[1]}' needs a positive period",
                    lineno,
                )
            axes_spec[words[1]] = (0.0, period, True)
        elif key == "fiber":
            fiber = value
        else:
            raise ManifestError(f"unknown chart entry '{key}'", lineno)
    if not coords:
        raise ManifestError("chart section has no 'coords' entry", header_line)
    axes = []
    for name in coords:
        if name not in axes_spec:
            raise ManifestError(
                f"coordinate '{name}' has no box/periodic entry", header_line
            )
        lo, hi, periodic = axes_spec[name]
        try:
            axes.append(CoordinateAxis(name, lo, hi, periodic))
        except GeometryError as err:
            raise ManifestError(str(err), header_line) from err
    extra = set(axes_spec) - set(coords)
    if extra:
        raise ManifestError(
            f"box/periodic entries for unknown coordinates {sorted(extra)}",
            header_line,
        )
    try:
        return Chart(tuple(axes), fiber=fiber)
    except GeometryError as err:
        raise ManifestError(str(err), header_line) from err


def _parse_int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ManifestError(f"{what} must be an integer, got {value!r}", lineno) from None


def _parse_sampling(entries, base: SamplePlan) -> SamplePlan:
    grid, random, seed = base.grid, base.random, base.seed
    for key, value, lineno in entries:
        if key == "grid":
            parts = [_parse_int(p, "grid", lineno) for p in value.split()]
            if not parts:
                raise ManifestError("grid needs at least one resolution", lineno)
            grid = parts[0] if len(parts) == 1 else tuple(parts)
        elif key == "random":
            random = _parse_int(value, "random", lineno)
        elif key == "seed":
            seed = _parse_int(value, "seed", lineno)
        else:
            raise ManifestError(f"unknown sampling entry '{key}'", lineno)
    try:
        return SamplePlan(grid=grid, random=random, seed=seed)
    except GeometryError as err:
        raise ManifestError(str(err), entries[0][2] if entries else 1) from err


def _parse_tolerances(entries, base: Tolerances) -> Tolerances:
    values = {}
    allowed = set(base.as_dict())
    for key, value, lineno in entries:
        if key not in allowed:
            raise ManifestError(f"unknown tolerance '{key}'", lineno)
        try:
            values[key] = float(value)
        except ValueError:
            raise ManifestError(
                f"tolerance '{key}' must be a number, got {value!r}", lineno
            ) from None
    return replace(base, **values)


def _parse_definitions(chart: Chart, entries, definitions: dict) -> None:
    for key, value, lineno in entries:
        words = key.split()
        if len(words) != 2 or words[0] not in ("expr", "field", "form"):
            raise ManifestError(
                f"define entries look like 'expr|field|form NAME = ...', got '{key}'",
                lineno,
            )
        what, name = words
        if name in definitions:
            raise ManifestError(f"duplicate definition '{name}'", lineno)
        try:
            if what == "expr":
                definitions[name] = chart.parse(value)
            elif what == "field":
                comps = [c.strip() for c in value.split(";")]
                definitions[name] = vector_field(chart, comps)
            else:
                definitions[name] = parse_one_form(chart, value)
        except (ex.ExprError, GeometryError) as err:
            raise ManifestError(str(err), lineno) from err


def _lookup(definitions: dict, name: str, want: type, lineno: int):
    if name not in definitions:
        raise ManifestError(f"undefined name '{name}'", lineno)
    obj = definitions[name]
    if not isinstance(obj, want):
        raise ManifestError(
            f"'{name}' is a {type(obj).__name__}, expected {want.__name__}", lineno
        )
    return obj


_REQUIRED_KEYS = {
    "contact": {"form"},
    "even_contact": {"form"},
    "engel_pair": {"alpha", "beta"},
    "engel_frame": {"fields"},
    "contact_frame": {"v0", "v1"},
    "prolongation": {"frame", "n"},
    "extension": {"frame", "n"},
    "extension_family": {"frame", "g", "n"},
}

_DIMENSION_OF_KIND = {
    "contact": 3,
    "even_contact": 4,
    "engel_pair": 4,
    "engel_frame": 4,
    "contact_frame": 3,
    "prolongation": 3,
    "extension": 3,
    "extension_family": 3,
}


def _parse_structure(
    chart: Chart, name: str, entries, definitions: dict, header_line: int
) -> StructureDecl:
    options = {}
    kind = None
    for key, value, lineno in entries:
        if key == "kind":
            kind = value
            if kind not in _STRUCTURE_KINDS:
                raise ManifestError(f"unknown structure kind '{kind}'", lineno)
        else:
            options[key] = (value, lineno)
    if kind is None:
        raise ManifestError(f"structure '{name}' has no kind", header_line)
    missing = _REQUIRED_KEYS[kind] - set(options)
    if missing:
        raise ManifestError(
            f"structure '{name}' ({kind}) is missing {sorted(missing)}", header_line
        )
    if chart.dim != _DIMENSION_OF_KIND[kind]:
        raise ManifestError(
            f"structure kind '{kind}' needs a {_DIMENSION_OF_KIND[kind]}-dimensional"
            f" chart, this manifest's chart has dimension {chart.dim}",
            header_line,
        )

    # validate references and value shapes now so errors carry line numbers
    for key, (value, lineno) in options.items():
        if key in ("form", "alpha", "beta"):
            _lookup(definitions, value, KForm, lineno)
        elif key in ("v0", "v1"):
            _lookup(definitions, value, VectorField, lineno)
        elif key == "fields":
            names = value.split()
            if len(names) != 2:
                raise ManifestError("'fields' needs exactly two names", lineno)
            for fname in names:
                _lookup(definitions, fname, VectorField, lineno)
        elif key == "frame":
            pass  # structure reference, resolved below
        elif key == "g":
            for gname in value.split():
                _lookup(definitions, gname, ScalarExpr, lineno)
        elif key == "f1":
            parts = value.split()
            if len(parts) != 2:
                raise ManifestError("'f1' needs two expression names", lineno)
            for ename in parts:
                _lookup(definitions, ename, ScalarExpr, lineno)
        elif key == "n":
            for part in value.split():
                try:
                    int(part)
                except ValueError:
                    raise ManifestError(f"'n' must be integers, got {part!r}", lineno)
        else:
            raise ManifestError(f"unknown structure entry '{key}'", lineno)
    if kind == "extension" and ("g" in options) == ("f1" in options):
        raise ManifestError(
            f"extension '{name}' needs exactly one of 'g' or 'f1'", header_line
        )
    if kind == "extension_family":
        gs = options["g"][0].split()
        ns = options["n"][0].split()
        if len(gs) != len(ns):
            raise ManifestError(
                "'g' and 'n' lists must have equal length", header_line
            )
    flat = {k: v for k, (v, _) in options.items()}
    return StructureDecl(name=name, kind=kind, options=flat, line=header_line)


def _parse_task(label: str, entries, structures: dict, header_line: int) -> TaskDecl:
    options = {}
    kind = None
    for key, value, lineno in entries:
        if key == "kind":
            kind = value
            if kind not in _TASK_KINDS:
                raise ManifestError(f"unknown task kind '{kind}'", lineno)
        elif key == "target":
            if value not in structures:
                raise ManifestError(f"undefined structure '{value}'", lineno)
            options["target"] = value
        elif key in ("expect", "base_points"):
            _parse_int(value, key, lineno)
            options[key] = value
        elif key in ("invariant", "section", "out"):
            options[key] = value
        else:
            raise ManifestError(f"unknown task entry '{key}'", lineno)
    if kind is None:
        raise ManifestError(f"task '{label}' has no kind", header_line)
    if "target" not in options:
        raise ManifestError(f"task '{label}' has no target", header_line)
    if kind == "invariant" and "invariant" not in options:
        raise ManifestError(f"invariant task '{label}' names no invariant", header_line)
    return TaskDecl(task_id=label, kind=kind, options=options, line=header_line)


# ---------------------------------------------------------------------------
# materialization


def resolve_contact_frame(manifest: Manifest, decl: StructureDecl):
    from .prolongation import ContactFrame

    v0 = manifest.definitions[decl.options["v0"]]
    v1 = manifest.definitions[decl.options["v1"]]
    oriented = decl.options.get("orientation", "positive") != "negative"
    return ContactFrame(manifest.chart, v0, v1, positively_oriented=oriented)


def _frame_of(manifest: Manifest, decl: StructureDecl):
    ref = decl.options["frame"]
    if ref not in manifest.structures:
        raise ManifestError(f"undefined structure '{ref}'", decl.line)
    target = manifest.structures[ref]
    if target.kind != "contact_frame":
        raise ManifestError(
            f"'{ref}' is a {target.kind}, expected contact_frame", decl.line
        )
    return resolve_contact_frame(manifest, target)


def materialize(manifest: Manifest, decl: StructureDecl):
    """Build the runtime object for a structure declaration."""
    from .extension import ExtensionSpec
    from .prolongation import prolong

    defs = manifest.definitions
    if decl.kind in ("contact", "even_contact"):
        return defs[decl.options["form"]]
    if decl.kind == "engel_pair":
        return EngelPair(defs[decl.options["alpha"]], defs[decl.options["beta"]])
    if decl.kind == "engel_frame":
        f1, f2 = decl.options["fields"].split()
        return Distribution2(manifest.chart, defs[f1], defs[f2])
    if decl.kind == "contact_frame":
        return resolve_contact_frame(manifest, decl)
    if decl.kind == "prolongation":
        frame = _frame_of(manifest, decl)
        n = int(decl.options["n"])
        return prolong(frame, n, manifest.sampling, manifest.tolerances, verify=False)
    if decl.kind == "extension":
        frame = _frame_of(manifest, decl)
        n = int(decl.options["n"])
        if "g" in decl.options:
            return ExtensionSpec(frame=frame, n=n, g=defs[decl.options["g"]])
        a, b = decl.options["f1"].split()
        return ExtensionSpec(frame=frame, n=n, f1=(defs[a], defs[b]))
    if decl.kind == "extension_family":
        frame = _frame_of(manifest, decl)
        gs = [defs[gname] for gname in decl.options["g"].split()]
        ns = [int(p) for p in decl.options["n"].split()]

        def specs(s: float) -> ExtensionSpec:
            i = int(round(s))
            return ExtensionSpec(frame=frame, n=ns[i], g=gs[i])

        return specs, list(range(len(gs)))
    raise ManifestError(f"cannot materialize kind '{decl.kind}'", decl.line)


# ---------------------------------------------------------------------------
# serialization of constructed structures


def _axis_to_text(axis: CoordinateAxis) -> str:
    if axis.periodic:
        return f"periodic {axis.name} = {axis.period!r}"
    return f"box {axis.name} = {axis.lo!r} {axis.hi!r}"


def frame_to_manifest_text(dist: Distribution2, name: str = "constructed") -> str:
    """Serialize a two-field frame as a standalone manifest."""
    chart = dist.chart
    lines = ["[chart]", "coords = " + " ".join(chart.names)]
    lines += [_axis_to_text(a) for a in chart.axes]
    if chart.fiber:
        lines.append(f"fiber = {chart.fiber}")
    lines += ["", "[define]"]
    for label, fieldobj in (("F1", dist.x), ("F2", dist.y)):
        comps = "; ".join(ex.to_text(c) for c in fieldobj.components)
        lines.append(f"field {label} = {comps}")
    lines += [
        "",
        f"[structure {name}]",
        "kind = engel_frame",
        "fields = F1 F2",
        "",
        f"[task verify_{name}]",
        "kind = verify",
        f"target = {name}",
        "",
    ]
    return "\n".join(lines)
