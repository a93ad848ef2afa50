"""Error measurement: regression fits, node errors, coupled curves, negativity."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdelab import brownian as bw
from sdelab import convergence as cv
from sdelab import models, schemes
from sdelab.convergence import MeasurementError

SC1 = models.CirParams(kappa=5.07, lam=0.0457, theta=0.48, x0=0.05)
GBM = models.build_model("gbm", models.CevParams(mu=0.05, sigma=0.2, gamma=1.0, s0=1.0))

EULER = schemes.StepperConfig(scheme_id="explicit_euler")


def _cir_sc1():
    return models.build_model("cir", SC1)


def _truncated_euler():
    return schemes.StepperConfig(
        scheme_id="modified_euler", extension=schemes.extension_truncated_sqrt(SC1)
    )


def _path(n, values, T=1.0):
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[None]
    return schemes.SamplePath(
        grid=bw.TimeGrid(T=T, n=n),
        values=vals,
        scheme_id="manual",
        negative_step_count=0,
        domain_exit_count=0,
        overflow=False,
    )


# ---------------------------------------------------------------------------
# fit_order


def test_fit_order_recovers_exact_power_law():
    steps = [2.0**-k for k in range(2, 7)]
    errs = [0.7 * dt**0.5 for dt in steps]
    reg = cv.fit_order(steps, errs)
    assert math.isclose(reg.slope, 0.5, rel_tol=1e-12)
    assert math.isclose(reg.intercept, math.log(0.7), rel_tol=1e-10)
    assert reg.residual_stderr < 1e-12


def test_fit_order_constant_errors_give_slope_zero():
    steps = [2.0**-k for k in range(1, 6)]
    reg = cv.fit_order(steps, [0.3] * len(steps))
    assert abs(reg.slope) < 1e-13


@given(
    st.floats(min_value=-2.0, max_value=2.0),
    st.floats(min_value=0.01, max_value=100.0),
)
def test_fit_order_recovers_random_power_law(q, c):
    steps = [2.0**-k for k in range(1, 5)]
    errs = [c * dt**q for dt in steps]
    reg = cv.fit_order(steps, errs)
    assert math.isclose(reg.slope, q, rel_tol=1e-9, abs_tol=1e-9)


def test_fit_order_rejects_bad_input():
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5], [0.1])
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5, 0.25], [0.1, 0.0])
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5, 0.25], [0.1, -0.2])
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5, 0.25], [0.1, math.inf])
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5, 0.0], [0.1, 0.05])
    with pytest.raises(MeasurementError):
        cv.fit_order([0.5, 0.25, 0.125], [0.1, 0.05])


# ---------------------------------------------------------------------------
# max_node_error


def test_max_node_error_identical_paths_is_exact_zero():
    a = _path(4, [1.0, 1.1, 0.9, 1.3, 1.2])
    b = _path(4, [1.0, 1.1, 0.9, 1.3, 1.2])
    assert cv.max_node_error(a, b) == 0.0


def test_max_node_error_constant_offset():
    vals = np.linspace(1.0, 2.0, 5)
    a = _path(4, vals)
    b = _path(4, vals + 0.25)
    assert math.isclose(cv.max_node_error(a, b), 0.25, rel_tol=1e-15)


def test_max_node_error_uses_shared_nodes_only():
    a = _path(4, np.zeros(5))
    fine = np.zeros(9)
    fine[3] = 7.0  # odd node of the refined grid, not shared with n=4
    assert cv.max_node_error(a, _path(8, fine)) == 0.0
    fine2 = np.zeros(9)
    fine2[2] = 7.0  # t=1/4 is a node of both grids
    assert cv.max_node_error(a, _path(8, fine2)) == 7.0


def test_max_node_error_euclidean_distance():
    a = _path(2, np.zeros((2, 3)))
    ref = np.zeros((2, 3))
    ref[:, 1] = (3.0, 4.0)
    assert cv.max_node_error(a, _path(2, ref)) == 5.0


def test_max_node_error_rejects_incompatible_paths():
    a = _path(4, np.zeros(5))
    with pytest.raises(MeasurementError):
        cv.max_node_error(a, _path(4, np.zeros(5), T=2.0))
    with pytest.raises(MeasurementError):
        cv.max_node_error(a, _path(6, np.zeros(7)))
    with pytest.raises(MeasurementError):
        cv.max_node_error(a, _path(4, np.zeros((2, 5))))


# ---------------------------------------------------------------------------
# report validation


def test_error_report_validates_fields():
    with pytest.raises(MeasurementError):
        cv.ErrorReport(stepsizes=(0.5, 0.25), errors=(0.1,), p=2, regression=None)
    with pytest.raises(MeasurementError):
        cv.ErrorReport(stepsizes=(0.25, 0.5), errors=(0.1, 0.2), p=2, regression=None)
    with pytest.raises(MeasurementError):
        cv.ErrorReport(stepsizes=(0.5, 0.0), errors=(0.1, 0.2), p=2, regression=None)
    with pytest.raises(MeasurementError):
        cv.ErrorReport(stepsizes=(0.5,), errors=(0.1,), p=0, regression=None)


def test_default_reference_selection():
    assert cv.default_reference_config(_truncated_euler(), _cir_sc1()).scheme_id == (
        "cir_implicit_sqrt_euler"
    )
    sc2 = models.build_model(
        "cir", models.CirParams(kappa=2.0, lam=0.09, theta=1.0, x0=0.09)
    )
    ref = cv.default_reference_config(EULER, sc2)
    assert ref.scheme_id == "modified_euler" and ref.extension is not None
    assert cv.default_reference_config(EULER, GBM) is EULER


# ---------------------------------------------------------------------------
# coupling: self-reference must be exactly zero


def test_strong_self_reference_error_is_exact_zero():
    rep = cv.strong_error_curve(
        EULER,
        GBM,
        T=1.0,
        seed=7,
        n_list=[64],
        n_samples=50,
        ref_config=EULER,
        ref_n=64,
    )
    assert rep.errors == (0.0,)
    assert rep.stderrs == (0.0,)
    assert rep.regression is None
    assert rep.valid and rep.overflow_counts == (0,)


def test_pathwise_self_comparison_is_zero():
    rep = cv.pathwise_error_curve(
        EULER,
        GBM,
        T=1.0,
        key=bw.StreamKey(seed=7, sample_index=0, substream=0),
        n_list=[64],
        ref_config=EULER,
        ref_n=64,
    )
    assert rep.errors == (0.0,)
    assert rep.p == 1 and rep.stderrs is None


# ---------------------------------------------------------------------------
# pathwise curves


def test_pathwise_gbm_euler_against_exact_solution():
    rep = cv.pathwise_error_curve(
        EULER,
        GBM,
        T=1.0,
        key=bw.StreamKey(seed=12, sample_index=0, substream=0),
        n_list=[2**k for k in range(4, 11)],
        reference="exact",
    )
    assert rep.metadata["reference"] == "exact"
    assert 0.35 < rep.regression.slope < 0.65


def test_pathwise_cir_milstein_beats_euler_on_one_path():
    # Scenario I, single driving path: the truncated Milstein scheme shows
    # roughly first-order decay while truncated Euler stays near one half.
    key = bw.StreamKey(seed=21, sample_index=0, substream=0)
    ref = schemes.StepperConfig(scheme_id="cir_implicit_sqrt_euler")
    kw = dict(T=5.0, key=key, n_list=[2**k for k in range(8, 14)], ref_config=ref, ref_n=2**15)
    mil = cv.pathwise_error_curve(
        schemes.StepperConfig(
            scheme_id="modified_milstein",
            extension=schemes.extension_truncated_sqrt(SC1),
        ),
        _cir_sc1(),
        **kw,
    )
    eul = cv.pathwise_error_curve(_truncated_euler(), _cir_sc1(), **kw)
    assert 0.8 < mil.regression.slope < 1.25
    assert 0.35 < eul.regression.slope < 0.65
    assert mil.regression.slope > eul.regression.slope


# ---------------------------------------------------------------------------
# strong curves


def test_zero_noise_strong_curve_has_first_order_slope():
    flat = models.build_model(
        "gbm", models.CevParams(mu=0.8, sigma=0.0, gamma=1.0, s0=1.0)
    )
    rep = cv.strong_error_curve(
        EULER,
        flat,
        T=1.0,
        seed=5,
        n_list=[2**k for k in range(3, 9)],
        n_samples=2,
        reference="exact",
    )
    assert 0.95 < rep.regression.slope < 1.05
    assert all(s == 0.0 for s in rep.stderrs)  # deterministic paths


def test_stderr_shrinks_with_sample_size():
    kw = dict(T=1.0, seed=33, n_list=[32], reference="exact")
    small = cv.strong_error_curve(EULER, GBM, n_samples=400, **kw)
    large = cv.strong_error_curve(EULER, GBM, n_samples=1600, **kw)
    ratio = small.stderrs[0] / large.stderrs[0]
    assert 1.6 < ratio < 2.4


def test_strong_errors_decrease_with_information():
    rep = cv.strong_error_curve(
        _truncated_euler(),
        _cir_sc1(),
        T=5.0,
        seed=41,
        n_list=[2**k for k in range(4, 9)],
        n_samples=500,
        ref_config=schemes.StepperConfig(scheme_id="cir_implicit_sqrt_euler"),
        ref_n=2**11,
    )
    assert rep.valid and all(c == 0 for c in rep.overflow_counts)
    assert all(math.isfinite(e) and e > 0 for e in rep.errors)
    for i in range(len(rep.errors) - 1):
        band = 2.33 * (rep.stderrs[i] + rep.stderrs[i + 1])
        assert rep.errors[i + 1] <= rep.errors[i] + band
    assert 0.4 < rep.regression.slope < 1.05


def test_overflow_policy_exclude_vs_propagate():
    preset = models.get_preset("three-halves-mc")
    model = models.build_model(preset.model_id, preset.params)
    kw = dict(
        T=preset.T,
        seed=777,
        n_list=[64],
        n_samples=2000,
        ref_config=schemes.StepperConfig(scheme_id="tamed_euler"),
        ref_n=256,
    )
    keep = cv.strong_error_curve(EULER, model, policy="exclude", **kw)
    prop = cv.strong_error_curve(EULER, model, policy="propagate", **kw)
    assert keep.overflow_counts == (9,) and prop.overflow_counts == (9,)
    assert math.isfinite(keep.errors[0])
    assert math.isclose(keep.errors[0], 1.913742590270859e111, rel_tol=1e-12)
    assert prop.errors == (math.inf,)
    assert prop.regression is None
    assert keep.valid and prop.valid  # the reference itself never overflowed


def test_reference_overflow_invalidates_report():
    preset = models.get_preset("three-halves-mc")
    model = models.build_model(preset.model_id, preset.params)
    rep = cv.strong_error_curve(
        schemes.StepperConfig(scheme_id="tamed_euler"),
        model,
        T=preset.T,
        seed=1,
        n_list=[16],
        n_samples=500,
        ref_config=EULER,
        ref_n=16,
    )
    assert not rep.valid
    assert rep.errors == (math.inf,)
    assert rep.regression is None
    assert rep.overflow_counts[0] > 0


# ---------------------------------------------------------------------------
# input validation


def test_resolution_list_must_divide_reference_dyadically():
    for n_list, ref_n in ([48], 256), ([512], 256), ([64], 192):
        with pytest.raises(MeasurementError, match="dyadically"):
            cv.strong_error_curve(
                EULER, GBM, T=1.0, seed=1, n_list=n_list, n_samples=2, ref_n=ref_n
            )
    with pytest.raises(MeasurementError):
        cv.strong_error_curve(EULER, GBM, T=1.0, seed=1, n_list=[], n_samples=2)


def test_reference_and_policy_guards():
    with pytest.raises(MeasurementError, match="gbm"):
        cv.strong_error_curve(
            _truncated_euler(),
            _cir_sc1(),
            T=5.0,
            seed=1,
            n_list=[8],
            n_samples=2,
            reference="exact",
        )
    with pytest.raises(MeasurementError, match="policy"):
        cv.strong_error_curve(
            EULER, GBM, T=1.0, seed=1, n_list=[8], n_samples=2, policy="drop"
        )
    with pytest.raises(MeasurementError, match="reference"):
        cv.pathwise_error_curve(
            EULER,
            GBM,
            T=1.0,
            key=bw.StreamKey(seed=1, sample_index=0, substream=0),
            n_list=[8],
            reference="closed_form",
        )


# ---------------------------------------------------------------------------
# negativity statistics


def test_negativity_counts_truncated_euler():
    st_ = cv.negativity_stats(
        _truncated_euler(), _cir_sc1(), T=5.0, seed=51, n=512, n_samples=2000
    )
    assert 0.80 < st_.avg_negative_steps < 1.05
    assert 0.45 < st_.negative_path_fraction < 0.55


def test_negativity_symmetrized_scheme_is_exactly_zero():
    st_ = cv.negativity_stats(
        schemes.StepperConfig(
            scheme_id="reflected_euler", projection=schemes.projection_abs()
        ),
        _cir_sc1(),
        T=5.0,
        seed=51,
        n=512,
        n_samples=2000,
    )
    assert st_.avg_negative_steps == 0.0
    assert st_.negative_path_fraction == 0.0


def test_negativity_requires_scalar_noise():
    heston = models.build_model(
        "heston_log",
        models.HestonParams(
            mu=0.0319,
            kappa=5.07,
            lam=0.0457,
            theta=0.48,
            rho=-0.7,
            s0=100.0,
            v0=0.05,
            r=0.0319,
        ),
    )
    with pytest.raises(MeasurementError, match="scalar"):
        cv.negativity_stats(
            schemes.StepperConfig(scheme_id="log_heston_composite"),
            heston,
            T=1.0,
            seed=1,
            n=16,
            n_samples=4,
        )
