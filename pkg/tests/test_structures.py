import numpy as np
import pytest

from engelcalc import charts as ch
from engelcalc import expr as ex
from engelcalc.charts import (
    SamplePlan,
    coordinate_field,
    parse_one_form,
    sample_points,
    vector_field,
    volume_form,
    wedge,
)
from engelcalc.structures import (
    DimensionError,
    Distribution2,
    EngelPair,
    RankDeficiencyError,
    annihilator_1form,
    characteristic_vector_field,
    check_characteristic,
    check_contact_3d,
    check_engel_frame,
    check_engel_pair,
    check_even_contact,
    derived_square,
    twisting_condition_ranks,
)

PLAN = SamplePlan(grid=4, random=60, seed=0)


# ---------------------------------------------------------------------------
# contact


def test_contact_standard_passes(box3):
    alpha = parse_one_form(box3, "dy - z*dx")
    rep = check_contact_3d(alpha, PLAN)
    assert rep.passed
    assert rep.witnesses["min_abs"] == pytest.approx(1.0)
    assert rep.witnesses["max_abs"] == pytest.approx(1.0)


def test_contact_exact_form_fails(box3):
    rep = check_contact_3d(parse_one_form(box3, "dy"), PLAN)
    assert not rep.passed


def test_contact_torus_passes(t3):
    rep = check_contact_3d(parse_one_form(t3, "cos(z)*dx - sin(z)*dy"), PLAN)
    assert rep.passed
    assert rep.witnesses["min_over_max"] == pytest.approx(1.0)


def test_contact_wrong_dimension(box4):
    with pytest.raises(DimensionError):
        check_contact_3d(parse_one_form(box4, "dy - z*dx"), PLAN)


# ---------------------------------------------------------------------------
# even-contact


def test_even_contact_standard(box4):
    assert check_even_contact(parse_one_form(box4, "dy - z*dx"), PLAN).passed


def test_even_contact_exact_fails(box4):
    assert not check_even_contact(parse_one_form(box4, "dy"), PLAN).passed


def test_even_contact_second_form(box4):
    assert check_even_contact(parse_one_form(box4, "dz - w*dx"), PLAN).passed


# ---------------------------------------------------------------------------
# pairs


def test_engel_pair_standard_order(std_pair_forms):
    alpha, beta = std_pair_forms
    rep = check_engel_pair(EngelPair(alpha, beta), PLAN)
    assert rep.passed
    assert rep.witnesses["condition1_min_over_max"] >= 0.5
    assert rep.witnesses["condition2_max_abs"] <= 1e-12


def test_engel_pair_swapped_order_fails_condition_one(std_pair_forms):
    alpha, beta = std_pair_forms
    rep = check_engel_pair(EngelPair(beta, alpha), PLAN)
    assert not rep.passed
    assert not rep.subreports[0].passed  # condition (1)
    assert rep.subreports[0].witnesses["max_abs"] <= 1e-12


def test_engel_pair_degenerate(std_pair_forms):
    alpha, _ = std_pair_forms
    rep = check_engel_pair(EngelPair(alpha, alpha), PLAN)
    assert not rep.passed
    assert not rep.subreports[0].passed


def test_engel_pair_auto_orient_reports_both(std_pair_forms):
    alpha, beta = std_pair_forms
    rep = check_engel_pair(EngelPair(beta, alpha), PLAN, auto_orient=True)
    assert not rep.passed
    assert any("swapped order (beta, alpha): pass" in n for n in rep.notes)
    assert any("given order (alpha, beta): fail" in n for n in rep.notes)


# ---------------------------------------------------------------------------
# frames


def test_engel_frame_standard_kernel(box4, std_kernel_frame):
    d = Distribution2(box4, *std_kernel_frame)
    rep = check_engel_frame(d, PLAN)
    assert rep.passed
    assert rep.witnesses["rank_step1_min"] == rep.witnesses["rank_step1_max"] == 3
    assert rep.witnesses["rank_step2_min"] == rep.witnesses["rank_step2_max"] == 4


def test_engel_frame_integrable_fails(box4):
    d = Distribution2(box4, coordinate_field(box4, "x"), coordinate_field(box4, "y"))
    rep = check_engel_frame(d, PLAN)
    assert not rep.passed
    assert rep.witnesses["rank_step1_max"] == 2


def test_engel_frame_prolonged(std_frame):
    from engelcalc.prolongation import prolong

    d = prolong(std_frame, 2).distribution
    assert check_engel_frame(d, PLAN).passed


def test_pair_and_kernel_frame_verdicts_agree(box4, std_pair_forms, std_kernel_frame):
    """Pair conditions and derived-rank conditions accept the same fixtures."""
    alpha, beta = std_pair_forms
    cases = [
        (EngelPair(alpha, beta), Distribution2(box4, *std_kernel_frame)),
        # coordinate-permuted image of the standard pair and its kernel
        (
            EngelPair(
                parse_one_form(box4, "dx - y*dz"), parse_one_form(box4, "dw - x*dz")
            ),
            Distribution2(
                box4,
                coordinate_field(box4, "y"),
                vector_field(box4, ["y", "0", "1", "x"]),
            ),
        ),
        (
            EngelPair(parse_one_form(box4, "dz"), parse_one_form(box4, "dy")),
            Distribution2(
                box4, coordinate_field(box4, "x"), coordinate_field(box4, "w")
            ),
        ),
    ]
    for pair, dist in cases:
        # the kernel frame really is the pair's common kernel
        for form in (pair.alpha, pair.beta):
            for fieldobj in dist.frame:
                assert ex.simplify(ch.pairing(form, fieldobj)) == ex.ZERO
        assert check_engel_pair(pair, PLAN).passed == check_engel_frame(dist, PLAN).passed


# ---------------------------------------------------------------------------
# derived square and annihilator


def test_derived_square_standard(box4, std_kernel_frame):
    d = Distribution2(box4, *std_kernel_frame)
    x, y, xy = derived_square(d, PLAN)
    assert [ex.to_text(c) for c in xy.components] == ["0", "0", "1", "0"]


def test_derived_square_integrable_errors(box4):
    d = Distribution2(box4, coordinate_field(box4, "x"), coordinate_field(box4, "y"))
    with pytest.raises(RankDeficiencyError):
        derived_square(d, PLAN)


def test_derived_square_prolonged_third_vector(std_frame):
    """For the 1-fold prolongation the bracket is the quarter-turned frame
    combination scaled by one half."""
    from engelcalc.prolongation import prolong

    pe = prolong(std_frame, 1)
    _, _, xy = derived_square(pe.distribution, PLAN)
    chart = pe.chart
    pts = sample_points(chart, SamplePlan(grid=3, random=10, seed=2))
    got = xy.evaluate_at(pts)
    theta = pts[:, 3]
    v0 = np.stack([np.zeros_like(theta), np.zeros_like(theta), np.ones_like(theta)], 1)
    v1 = np.stack([np.ones_like(theta), pts[:, 2], np.zeros_like(theta)], 1)
    expected_base = 0.5 * (
        -np.sin(theta / 2)[:, None] * v0 + np.cos(theta / 2)[:, None] * v1
    )
    np.testing.assert_allclose(got[:, :3], expected_base, atol=1e-12)
    np.testing.assert_allclose(got[:, 3], 0.0, atol=1e-12)


def test_annihilator_standard_kernel(box4, std_kernel_frame):
    d = Distribution2(box4, *std_kernel_frame)
    beta = annihilator_1form(derived_square(d, PLAN), PLAN)
    # proportional to dy - z*dx: cross-coefficients cancel at samples
    pts = sample_points(box4, PLAN)
    vals = beta.evaluate_at(pts)
    reference = parse_one_form(box4, "dy - z*dx").evaluate_at(pts)
    cross = vals[:, :, None] * reference[:, None, :]
    assert np.max(np.abs(cross - cross.transpose(0, 2, 1))) <= 1e-12


def test_annihilator_coordinate_frame(box4):
    frame = tuple(coordinate_field(box4, n) for n in ("x", "y", "z"))
    beta = annihilator_1form(frame, PLAN)
    assert beta.keys == ((3,),)


def test_annihilator_prolonged_has_no_fiber_term(std_frame):
    from engelcalc.prolongation import prolong

    pe = prolong(std_frame, 2)
    beta = annihilator_1form(derived_square(pe.distribution, PLAN), PLAN)
    fiber_idx = pe.chart.index(pe.chart.fiber)
    assert ex.simplify(beta.coeff((fiber_idx,))) == ex.ZERO


# ---------------------------------------------------------------------------
# characteristic field


def test_characteristic_field_standard(box4):
    beta = parse_one_form(box4, "dy - z*dx")
    x0 = characteristic_vector_field(beta, volume_form(box4))
    assert [ex.to_text(c) for c in x0.components] == ["0", "0", "0", "1"]


def test_characteristic_field_second_form_fixed_by_contraction(box4):
    beta = parse_one_form(box4, "dz - w*dx")
    x0 = characteristic_vector_field(beta, volume_form(box4))
    # sign pinned by the defining contraction identity, verified internally
    assert [ex.to_text(c) for c in x0.components] == ["0", "1", "0", "0"]
    lhs = ch.interior_product(x0, volume_form(box4))
    rhs = wedge(beta, ch.exterior_derivative(beta))
    pts = sample_points(box4, PLAN)
    assert np.max(np.abs((lhs - rhs).evaluate_at(pts))) <= 1e-12


def test_characteristic_field_scales_inversely_with_volume(box4):
    beta = parse_one_form(box4, "dy - z*dx")
    x0 = characteristic_vector_field(beta, volume_form(box4))
    x0_half = characteristic_vector_field(beta, volume_form(box4, 2.0))
    pts = sample_points(box4, SamplePlan(grid=2, random=10, seed=0))
    np.testing.assert_allclose(
        x0_half.evaluate_at(pts), 0.5 * x0.evaluate_at(pts), atol=1e-14
    )


def test_check_characteristic_standard(box4):
    beta = parse_one_form(box4, "dy - z*dx")
    rep = check_characteristic(coordinate_field(box4, "w"), beta, PLAN)
    assert rep.passed
    assert rep.witnesses["lie_wedge_max"] <= 1e-12


def test_check_characteristic_wrong_direction_fails(box4):
    beta = parse_one_form(box4, "dy - z*dx")
    rep = check_characteristic(coordinate_field(box4, "x"), beta, PLAN)
    assert not rep.passed  # beta(d/dx) = -z is nonzero at generic samples


def test_check_characteristic_scale_invariant(box4):
    beta = parse_one_form(box4, "dy - z*dx")
    scaled = coordinate_field(box4, "w").scaled_by(box4.parse("1 + x^2"))
    assert check_characteristic(scaled, beta, PLAN).passed


# ---------------------------------------------------------------------------
# chained structure properties


def test_engel_chain_frame_to_characteristic(
    box4, std_kernel_frame, std_frame, t3_frame
):
    """Rank conditions imply the even-contact annihilator and a fiber-like
    characteristic field, for every passing fixture."""
    from engelcalc.prolongation import prolong

    fixtures = [
        Distribution2(box4, *std_kernel_frame),
        prolong(std_frame, 1).distribution,
        prolong(std_frame, 3).distribution,
        prolong(t3_frame, 2).distribution,
    ]
    for d in fixtures:
        assert check_engel_frame(d, PLAN).passed
        beta = annihilator_1form(derived_square(d, PLAN), PLAN)
        assert check_even_contact(beta, PLAN).passed
        x0 = characteristic_vector_field(beta, volume_form(d.chart))
        assert check_characteristic(x0, beta, PLAN).passed


def test_rank_verdicts_invariant_under_rescaling(box4, std_kernel_frame):
    scale = box4.parse("1 + x^2/4")
    x, y = std_kernel_frame
    plain = check_engel_frame(Distribution2(box4, x, y), PLAN)
    scaled = check_engel_frame(
        Distribution2(box4, x.scaled_by(scale), y.scaled_by(scale)), PLAN
    )
    assert plain.passed == scaled.passed
    for key in ("rank_step1_min", "rank_step1_max", "rank_step2_min", "rank_step2_max"):
        assert plain.witnesses[key] == scaled.witnesses[key]


def test_twisting_condition_matches_engel_verdict(box4, std_kernel_frame, std_frame):
    """Rank 3 of (X0, V, [X0, V]) at all samples iff the frame check passes,
    for plane fields containing the characteristic direction of ker(dy - z dx)."""
    from engelcalc.prolongation import prolong

    x0 = coordinate_field(box4, "w")
    pe1 = prolong(std_frame, 1)
    positives = [std_kernel_frame[1]]
    negatives = [coordinate_field(box4, "z"), vector_field(box4, ["1", "z", "0", "0"])]
    for v in positives:
        ranks = twisting_condition_ranks(x0, v, PLAN)
        engel = check_engel_frame(Distribution2(box4, x0, v), PLAN).passed
        assert bool(np.all(ranks == 3)) == engel is True
    for v in negatives:
        ranks = twisting_condition_ranks(x0, v, PLAN)
        engel = check_engel_frame(Distribution2(box4, x0, v), PLAN).passed
        assert not np.all(ranks == 3) and not engel
    # prolonged case: characteristic is the fiber direction
    xf = coordinate_field(pe1.chart, pe1.chart.fiber)
    ranks = twisting_condition_ranks(xf, pe1.twist_field, PLAN)
    assert np.all(ranks == 3) and check_engel_frame(pe1.distribution, PLAN).passed
