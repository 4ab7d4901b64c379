"""Execute manifest tasks and assemble run reports."""

from __future__ import annotations

import hashlib
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as ex
from .charts import (
    GeometryError,
    SamplePlan,
    coordinate_field,
    fd_lie_bracket,
    lie_bracket,
    sample_points,
)
from .extension import ExtensionSpec, extend, extend_family, verify_extension_identities
from .invariants import (
    BoundaryConventionWarning,
    minimal_twisting_number,
    twisting_number,
)
from .manifest import Manifest, StructureDecl, TaskDecl, frame_to_manifest_text, materialize
from .prolongation import ProlongedEngel
from .report import RunReport, TaskRecord
from .structures import (
    CheckError,
    Distribution2,
    Tolerances,
    VerificationReport,
    check_characteristic,
    check_contact_3d,
    check_engel_frame,
    check_engel_pair,
    check_even_contact,
)

COMMAND_TASK_KINDS = {
    "verify": ("verify", "identities"),
    "invariant": ("invariant",),
    "construct": ("construct",),
}


def _report_witnesses(rep: VerificationReport) -> dict:
    out = dict(rep.witnesses)
    if rep.first_failure is not None:
        out["first_failure"] = rep.first_failure
    return out


def _fd_cross_check(dist: Distribution2, manifest: Manifest, fd_step: float) -> float:
    """Max |symbolic - finite-difference| bracket component over a few points."""
    pts = sample_points(dist.chart, SamplePlan(grid=2, random=6, seed=manifest.sampling.seed))
    bracket = lie_bracket(dist.x, dist.y)
    sym = bracket.evaluate_at(pts)
    worst = 0.0
    for i, p in enumerate(pts):
        fd = fd_lie_bracket(dist.x, dist.y, p, fd_step)
        worst = max(worst, float(np.max(np.abs(fd - sym[i]))))
    return worst


def _verify_task(manifest: Manifest, decl: StructureDecl, fd_step: float) -> TaskRecord:
    plan = manifest.sampling
    tol = manifest.tolerances
    record = TaskRecord(task_id="", kind="verify", target=decl.name, status="error")
    obj = materialize(manifest, decl)

    if decl.kind == "contact":
        rep = check_contact_3d(obj, plan, tol)
    elif decl.kind == "even_contact":
        rep = check_even_contact(obj, plan, tol)
    elif decl.kind == "engel_pair":
        rep = check_engel_pair(obj, plan, tol, auto_orient=True)
        record.notes.extend(rep.notes)
    elif decl.kind == "engel_frame":
        rep = check_engel_frame(obj, plan, tol)
        record.witnesses["fd_bracket_max_error"] = _fd_cross_check(obj, manifest, fd_step)
    elif decl.kind == "contact_frame":
        rep = obj.validate(plan, tol)
    elif decl.kind == "prolongation":
        dist = obj.distribution
        rep = check_engel_frame(dist, plan, tol)
        char = check_characteristic(
            coordinate_field(dist.chart, dist.chart.fiber),
            _annihilator_for(dist, plan, tol),
            plan,
            tol,
        )
        record.witnesses.update({"characteristic_" + k: v for k, v in char.witnesses.items()})
        record.witnesses["fd_bracket_max_error"] = _fd_cross_check(dist, manifest, fd_step)
        if not char.passed:
            rep = char
    elif decl.kind == "extension":
        dist = extend(obj, plan, tol, verify=False)
        rep = check_engel_frame(dist, plan, tol)
        record.witnesses["fd_bracket_max_error"] = _fd_cross_check(dist, manifest, fd_step)
    elif decl.kind == "extension_family":
        specs, grid = obj
        family = extend_family(specs, grid, plan, tol)
        record.status = "pass"
        record.witnesses["mtw_profile"] = list(family.mtw_profile)
        return record
    else:
        raise GeometryError(f"verify cannot handle kind '{decl.kind}'")

    record.status = "pass" if rep.passed else "fail"
    record.witnesses.update(_report_witnesses(rep))
    return record


def _annihilator_for(dist: Distribution2, plan: SamplePlan, tol: Tolerances):
    from .structures import annihilator_1form, derived_square

    return annihilator_1form(derived_square(dist, plan, tol), plan, tol)


def _invariant_task(manifest: Manifest, decl: StructureDecl, task: TaskDecl) -> TaskRecord:
    plan = manifest.sampling
    tol = manifest.tolerances
    record = TaskRecord(task_id="", kind="invariant", target=decl.name, status="error")
    name = task.options["invariant"]
    obj = materialize(manifest, decl)

    if name == "twisting_number":
        if not isinstance(obj, ProlongedEngel):
            raise GeometryError("twisting_number targets a prolongation structure")
        count = int(task.options.get("base_points", "10"))
        rng = np.random.default_rng(plan.seed)
        base = obj.frame.chart
        lo = np.array([a.lo for a in base.axes])
        hi = np.array([a.hi for a in base.axes])
        base_pts = lo + (hi - lo) * rng.random((count, 3))
        value = twisting_number(obj.distribution, obj.frame, base_pts, tol)
    elif name == "minimal_twisting_number":
        if not isinstance(obj, ExtensionSpec):
            raise GeometryError("minimal_twisting_number targets an extension structure")
        dist = extend(obj, plan, tol, verify=False)
        base_plan = SamplePlan(grid=3, random=8, seed=plan.seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BoundaryConventionWarning)
            value = minimal_twisting_number(dist, obj.frame, base_plan, tol)
        for w in caught:
            record.notes.append(str(w.message))
    else:
        raise GeometryError(f"unknown invariant '{name}'")

    record.witnesses["value"] = int(value)
    record.witnesses["abs_value"] = abs(int(value))
    if "expect" in task.options:
        expected = int(task.options["expect"])
        record.witnesses["expected"] = expected
        record.status = "match" if value == expected else "mismatch"
    else:
        record.status = "computed"
    return record


def _identities_task(manifest: Manifest, decl: StructureDecl) -> TaskRecord:
    record = TaskRecord(task_id="", kind="identities", target=decl.name, status="error")
    obj = materialize(manifest, decl)
    if not isinstance(obj, ExtensionSpec):
        raise GeometryError("identities tasks target extension structures")
    rep = verify_extension_identities(obj, manifest.sampling, manifest.tolerances)
    record.status = "pass" if rep.passed else "fail"
    record.witnesses.update(_report_witnesses(rep))
    return record


def _construct_task(
    manifest: Manifest, decl: StructureDecl, task: TaskDecl, out_path: str | None
) -> TaskRecord:
    record = TaskRecord(task_id="", kind="construct", target=decl.name, status="error")
    obj = materialize(manifest, decl)
    if isinstance(obj, ProlongedEngel):
        dist = obj.distribution
    elif isinstance(obj, ExtensionSpec):
        dist = extend(obj, manifest.sampling, manifest.tolerances, verify=False)
    else:
        raise GeometryError("construct tasks target prolongation or extension structures")
    text = frame_to_manifest_text(dist, name=decl.name)
    destination = task.options.get("out", out_path)
    if destination is None:
        raise GeometryError("construct task needs an output path (--out)")
    Path(destination).write_text(text, encoding="utf-8")
    record.status = "done"
    record.witnesses["output_path"] = str(destination)
    record.witnesses["output_sha256"] = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return record


def run_tasks(
    manifest: Manifest,
    command: str = "verify",
    fd_step: float = 1e-3,
    out_path: str | None = None,
) -> RunReport:
    """Run the manifest's tasks of the kinds the command selects, in order.

    Task-level failures are recorded in the report (exit code 1); only
    I/O and parse problems escape as exceptions (exit code 2).
    """
    kinds = COMMAND_TASK_KINDS[command]
    started = time.perf_counter()
    records: list[TaskRecord] = []
    for task in manifest.tasks:
        if task.kind not in kinds:
            continue
        decl = manifest.structures[task.options["target"]]
        try:
            if task.kind == "verify":
                record = _verify_task(manifest, decl, fd_step)
            elif task.kind == "invariant":
                record = _invariant_task(manifest, decl, task)
            elif task.kind == "identities":
                record = _identities_task(manifest, decl)
            else:
                record = _construct_task(manifest, decl, task, out_path)
        except (GeometryError, CheckError, ex.ExprError) as err:
            record = TaskRecord(
                task_id=task.task_id,
                kind=task.kind,
                target=task.options["target"],
                status="error",
                error=str(err),
            )
        record.task_id = task.task_id
        records.append(record)
    duration = int(round((time.perf_counter() - started) * 1000))
    return RunReport(
        version=__version__,
        manifest_digest=manifest.digest,
        command=command,
        seed=manifest.sampling.seed,
        tasks=records,
        duration_ms=duration,
    )
