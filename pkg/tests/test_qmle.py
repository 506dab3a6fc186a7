import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volterra_qmle.errors import ContractError, DomainError, FisherSingularError, InputError, RankDeficiencyError, WeightError
from volterra_qmle.invert import SampledObservation, invert
from volterra_qmle.qmle import (
    BlockData,
    ContrastConfig,
    NelderMeadSettings,
    Weight,
    asymptotic_std,
    contrast,
    estimate,
    fisher_info,
    normal_equations,
    residuals,
    xi_block,
)
from volterra_qmle.sim import Model, SimConfig, linear_affine_model, pure_noise_model, simulate, simulate_deterministic


def _dataset(seed, eps=0.05, T=1.0, n=100, k=1, alpha=0.8, model=None):
    model = model or linear_affine_model()
    path = simulate(model, SimConfig(eps, alpha, T, n, seed=seed))
    obs = SampledObservation.from_path(path)
    return BlockData.from_reconstruction(invert(obs, alpha, k=k), obs), model


def test_exact_drift_increments_recover_theta_star():
    model = linear_affine_model(theta_star=(-0.7, 0.4))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(51, 1))
    delta = 0.02
    z = np.concatenate([[[0.0]], np.cumsum(delta * (-0.7 * x[:-1] + 0.4), axis=0)])
    data = BlockData(delta, z, x)
    for minimizer in ("closed-form", "nelder-mead"):
        res = estimate(data, model, ContrastConfig(minimizer=minimizer))
        np.testing.assert_allclose(res.theta_hat, [-0.7, 0.4], atol=1e-7)
        assert res.contrast_value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_closed_form_agrees_with_nelder_mead(seed):
    data, model = _dataset(seed, eps=0.1 if seed % 2 else 0.01)
    cf = estimate(data, model, ContrastConfig())
    nm = estimate(data, model, ContrastConfig(minimizer="nelder-mead"))
    assert nm.converged
    np.testing.assert_allclose(cf.theta_hat, nm.theta_hat, atol=1e-6)


@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 50))
def test_estimate_invariant_under_weight_scaling(scale, seed):
    data, model = _dataset(seed, n=50)
    base = estimate(data, model, ContrastConfig()).theta_hat
    scaled = estimate(data, model, ContrastConfig(weight=Weight.identity(scale))).theta_hat
    np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("scale", [0.01, 7.0])
def test_nelder_mead_invariant_under_weight_scaling(scale):
    data, model = _dataset(3, n=50)
    a = estimate(data, model, ContrastConfig(minimizer="nelder-mead")).theta_hat
    b = estimate(data, model, ContrastConfig(weight=Weight.identity(scale), minimizer="nelder-mead")).theta_hat
    np.testing.assert_allclose(a, b, atol=1e-7)


@given(theta=st.tuples(st.floats(-10, 10), st.floats(-10, 10)), seed=st.integers(0, 20))
def test_minimum_below_any_box_point(theta, seed):
    data, model = _dataset(seed, n=40)
    cfg = ContrastConfig()
    best = estimate(data, model, cfg)
    assert best.contrast_value <= contrast(data, model, theta, cfg) * (1 + 1e-12) + 1e-15
    assert contrast(data, model, theta, cfg) >= 0


def test_residuals_and_single_block_agree():
    data, model = _dataset(1, n=30, k=3)
    theta = np.array([-0.5, 2.0])
    xi = residuals(data, model, theta)
    assert xi.shape == (data.n_blocks, 1)
    for j in (0, 4, data.n_blocks - 1):
        np.testing.assert_allclose(xi_block(data, model, j, theta), xi[j], rtol=1e-14)
    with pytest.raises(DomainError):
        xi_block(data, model, data.n_blocks, theta)


def test_contrast_rejects_theta_outside_box():
    data, model = _dataset(1, n=30)
    with pytest.raises(DomainError):
        contrast(data, model, (11.0, 0.0), ContrastConfig())


def test_optimum_outside_box_lands_on_boundary():
    model = linear_affine_model()
    x = np.linspace(-1, 1, 41)[:, None]
    delta = 0.05
    # drift 30 x + 1 lies outside the +-10 box in the first coordinate
    z = np.concatenate([[[0.0]], np.cumsum(delta * (30.0 * x[:-1] + 1.0), axis=0)])
    data = BlockData(delta, z, x)
    cf = estimate(data, model, ContrastConfig())
    nm = estimate(data, model, ContrastConfig(minimizer="nelder-mead"))
    assert cf.method == "closed-form-bounded"
    assert cf.theta_hat[0] == pytest.approx(10.0)
    np.testing.assert_allclose(cf.theta_hat, nm.theta_hat, atol=1e-6)


def test_constant_state_is_rank_deficient():
    data = BlockData(0.1, np.linspace(0, 1, 11), np.full(11, 0.5))
    with pytest.raises(RankDeficiencyError):
        estimate(data, linear_affine_model(), ContrastConfig())


def test_normal_equations_need_linear_drift():
    nonlinear = Model(
        dim_x=1, dim_b=1, dim_theta=1,
        drift=lambda x, th: np.sin(th[0] * np.asarray(x)),
        diffusion=lambda x: np.ones(np.shape(x) + (1,)),
        drift_jacobian_theta=lambda x, th: (np.asarray(x) * np.cos(th[0] * np.asarray(x)))[..., None],
        theta_box=((-2.0, 2.0),), theta_star=(1.0,), x0=(0.0,),
    )
    data = BlockData(0.1, np.linspace(0, 1, 11), np.linspace(0, 2, 11))
    with pytest.raises(ContractError):
        normal_equations(data, nonlinear, np.ones((10, 1, 1)))
    res = estimate(data, nonlinear, ContrastConfig(minimizer="nelder-mead"))
    assert -2.0 <= res.theta_hat[0] <= 2.0 and res.method == "nelder-mead"


def test_singular_diffusion_weight():
    silent = Model(
        dim_x=1, dim_b=1, dim_theta=1,
        drift=lambda x, th: th[0] * np.ones_like(np.asarray(x)),
        diffusion=lambda x: np.zeros(np.shape(x) + (1,)),
        drift_jacobian_theta=lambda x, th: np.ones(np.shape(x) + (1,)),
        theta_box=((-2.0, 2.0),), theta_star=(1.0,), x0=(0.0,),
    )
    x = np.zeros((5, 1))
    with pytest.raises(WeightError):
        Weight.inverse_diffusion(lam=0.0).matrices(silent, x)
    assert np.all(np.isfinite(Weight.inverse_diffusion(lam=1e-6).matrices(silent, x)))


def test_inverse_diffusion_equals_identity_for_unit_noise():
    data, model = _dataset(2, n=60)
    a = estimate(data, model, ContrastConfig()).theta_hat
    b = estimate(data, model, ContrastConfig(weight=Weight.inverse_diffusion())).theta_hat
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_block_data_validation():
    with pytest.raises(InputError):
        BlockData(0.1, np.zeros(5), np.zeros(4))
    with pytest.raises(InputError):
        BlockData(0.1, np.zeros(1), np.zeros(1))
    with pytest.raises(DomainError):
        ContrastConfig(k=0)
    with pytest.raises(DomainError):
        ContrastConfig(minimizer="bfgs")


def test_result_serialisation():
    data, model = _dataset(4, n=40)
    res = estimate(data, model, ContrastConfig())
    payload = json.loads(res.to_json())
    assert payload["n_blocks"] == 40 and payload["converged"] is True
    lines = res.to_csv().splitlines()
    assert lines[0] == "theta_1,theta_2,contrast,n_blocks,converged"
    assert [float(v) for v in lines[1].split(",")[:2]] == list(res.theta_hat)


def _fisher_reference(alpha, T, n):
    path = simulate_deterministic(linear_affine_model(), SimConfig(0.0, alpha, T, n))
    x = path.x[:, 0]
    return np.array(
        [[np.trapezoid(x * x, path.times), np.trapezoid(x, path.times)], [np.trapezoid(x, path.times), T]]
    ), path


def test_fisher_info_matches_direct_integral():
    ref, path = _fisher_reference(0.8, 10.0, 8192)
    info = fisher_info(path, linear_affine_model())
    np.testing.assert_allclose(info.I, ref, rtol=1e-12)
    assert info.efficient
    std = asymptotic_std(info)
    np.testing.assert_allclose(std, np.sqrt(np.diag(np.linalg.inv(ref))), rtol=1e-10)
    np.testing.assert_allclose(asymptotic_std(info, epsilon=0.01), 0.01 * std, rtol=1e-14)


def test_fisher_info_converges_in_grid():
    a = asymptotic_std(fisher_info(_fisher_reference(0.8, 10.0, 4096)[1], linear_affine_model()))
    b = asymptotic_std(fisher_info(_fisher_reference(0.8, 10.0, 16384)[1], linear_affine_model()))
    np.testing.assert_allclose(a, b, rtol=2e-3)


def test_fisher_info_contracts():
    _, path = _fisher_reference(0.8, 1.0, 4096)
    info = fisher_info(path, linear_affine_model(), weight=Weight.identity(2.0))
    assert not info.efficient
    with pytest.raises(ContractError):
        asymptotic_std(info)
    with pytest.raises(FisherSingularError):
        fisher_info(simulate_deterministic(pure_noise_model(), SimConfig(0.0, 0.8, 1.0, 4096)), pure_noise_model())
    with pytest.raises(DomainError):
        fisher_info(simulate_deterministic(linear_affine_model(), SimConfig(0.0, 0.8, 1.0, 100)), linear_affine_model())


def test_nelder_mead_reports_restarts():
    data, model = _dataset(5, n=40)
    res = estimate(data, model, ContrastConfig(minimizer="nelder-mead", nelder_mead=NelderMeadSettings(n_starts=3)))
    assert len(res.diagnostics) == 3
    assert all("nfev" in d for d in res.diagnostics)
