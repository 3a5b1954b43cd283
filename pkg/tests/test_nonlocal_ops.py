"""Operator evaluation, the spectral oracle, and discrete assembly."""

import numpy as np
import pytest
from scipy.special import gamma

from fracbern.kernels import (fractional_kernel, anisotropic_kernel,
                              MeasureOnUnit, normalizing_constant)
from fracbern.funcspace import (gaussian_bump, plane_wave, modulated_gaussian,
                                polynomial_gaussian, constant, tensor_product,
                                affine_precompose, translate)
from fracbern.nonlocal_ops import (apply_nonlocal, apply_fractional,
                                   apply_superposition, spectral_oracle,
                                   singular_integral, singular_integral_batch,
                                   assemble_discrete, Lattice, default_plan,
                                   QuadratureFailure)
from fracbern.solvers import barrier


def test_constant_maps_to_zero():
    u = constant(7.0, 1)
    for s in [0.2, 0.8]:
        assert apply_fractional(s, u, 0.4).value == pytest.approx(0.0, abs=1e-12)


def test_cos_symbol_value():
    # (-Delta)^{1/2} cos = cos, symbol |1|^{2s} = 1
    u = plane_wave(1.0)
    for x in [0.0, 0.7, -2.2]:
        v = apply_fractional(0.5, u, x)
        assert v.value == pytest.approx(np.cos(x), rel=1e-6)


def test_barrier_strictly_negative():
    # the explicit barrier is a strict supersolution on the unit ball
    b = barrier(1.0, 1)
    v = apply_fractional(0.5, b, 0.0)
    assert v.value < -1.0


def test_identity_and_laplacian_endpoints():
    g = gaussian_bump(1, 0.0, 1.0)
    assert apply_fractional(0.0, g, 0.3).value == pytest.approx(
        float(g(np.array([[0.3]]))[0]))
    # -(d^2/dx^2) e^{-x^2/2} at 0 is +1
    assert apply_fractional(1.0, g, 0.0).value == pytest.approx(1.0)


def test_gaussian_closed_form_center():
    # (-Delta)^s e^{-x^2/2}(0) = 2^s Gamma(s + 1/2) / sqrt(pi)
    g = gaussian_bump(1, 0.0, 1.0)
    for s in [0.25, 0.5, 0.75]:
        want = 2 ** s * gamma(s + 0.5) / np.sqrt(np.pi)
        assert apply_fractional(s, g, 0.0).value == pytest.approx(want, rel=1e-9)
        assert spectral_oracle(s, g, 0.0) == pytest.approx(want, rel=1e-10)


def test_sweep_to_classical_order():
    # frequency-2 wave has symbol 2^{2s} -> 4 with O(1-s) drift
    u = plane_wave(2.0)
    x = 0.3
    drift = []
    for s in [0.9, 0.95, 0.99]:
        v = apply_fractional(s, u, x)
        assert v.value == pytest.approx(2 ** (2 * s) * np.cos(2 * x), rel=1e-7)
        drift.append(abs(v.value - 4 * np.cos(2 * x)))
    assert drift[0] > drift[1] > drift[2]
    # frequency-1 wave is a fixed point of every order
    c = plane_wave(1.0)
    for s in [0.9, 0.99]:
        assert apply_fractional(s, c, x).value == pytest.approx(np.cos(x),
                                                                rel=1e-7)


def test_superposition_atoms():
    g = gaussian_bump(1, 0.0, 1.0)
    mu = MeasureOnUnit.dirac(0.5)
    a = apply_superposition(mu, g, 0.3)
    b = apply_fractional(0.5, g, 0.3)
    assert a.value == pytest.approx(b.value, rel=1e-12)
    # half identity, half Laplacian on cos at 0: 1/2 + 1/2 = 1
    mu2 = MeasureOnUnit([(0.0, 0.5), (1.0, 0.5)])
    c = plane_wave(1.0)
    assert apply_superposition(mu2, c, 0.0).value == pytest.approx(1.0)


def test_superposition_identity_on_barrier():
    mu = MeasureOnUnit.dirac(0.0)
    b = barrier(1.0, 1)
    pts = np.linspace(-0.9, 0.9, 7)
    for x in pts:
        v = apply_superposition(mu, b, x)
        assert v.value <= -1.0 + 1e-12
        assert v.value == pytest.approx(x * x - 2.0)


def test_oracle_exact_symbols():
    assert spectral_oracle(0.5, plane_wave(1.0), 0.4) == pytest.approx(
        np.cos(0.4), rel=1e-14)
    for s in [0.2, 0.7]:
        want = 2 ** (2 * s) * np.cos(2 * 0.4)
        assert spectral_oracle(s, plane_wave(2.0), 0.4) == pytest.approx(
            want, rel=1e-14)


def test_oracle_unsupported():
    from fracbern.funcspace import SmoothFunction, Tail
    mystery = SmoothFunction(1, lambda x: np.tanh(x[:, 0]),
                             lambda x: np.ones((len(x), 1)),
                             lambda x: np.zeros((len(x), 1, 1)),
                             sup=1.0, tail=Tail.bounded(1.0))
    with pytest.raises(ValueError):
        spectral_oracle(0.5, mystery, 0.0)


def test_oracle_quadrature_agreement_catalog():
    cat = [gaussian_bump(1, 0.0, 1.0), gaussian_bump(1, 0.7, 0.6),
           polynomial_gaussian([0.0, 1.0]), modulated_gaussian(0.3, 0.8, 3.0)]
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1.5, 1.5, 6)
    worst = 0.0
    for u in cat:
        for s in [0.15, 0.5, 0.85]:
            for x in xs:
                a = apply_fractional(s, u, x)
                b = spectral_oracle(s, u, x)
                worst = max(worst, abs(a.value - b) / max(abs(b), 1e-10))
    assert worst < 1e-7


def test_linearity_within_errors():
    u = gaussian_bump(1, 0.0, 1.0)
    v = modulated_gaussian(0.4, 0.9, 2.0)
    w = u * 2.0 + v * (-0.7)
    x = 0.3
    a = apply_fractional(0.6, w, x)
    b = apply_fractional(0.6, u, x)
    c = apply_fractional(0.6, v, x)
    assert abs(a.value - (2 * b.value - 0.7 * c.value)) \
        <= a.error + 2 * b.error + 0.7 * c.error + 1e-10


def test_translation_covariance():
    u = gaussian_bump(1, 0.2, 0.8)
    a = np.array([0.45])
    x = 0.1
    lhs = apply_fractional(0.4, translate(u, a), x)
    rhs = apply_fractional(0.4, u, x + a[0])
    assert lhs.value == pytest.approx(rhs.value, rel=1e-9)


def test_anisotropic_change_of_variables():
    # L_A u(x) * det A = (-Delta)^s u_A(A x) with u_A = u o A^{-1}
    A = np.array([[1.4, 0.3], [0.3, 0.8]])
    s = 0.5
    K = anisotropic_kernel(s, A)
    u = gaussian_bump(2, [0.1, -0.2], 1.0)
    uA = affine_precompose(u, np.linalg.inv(A))
    x = np.array([0.2, 0.3])
    lhs = apply_nonlocal(K, u, x).value * np.linalg.det(A)
    rhs = apply_fractional(s, uA, A @ x).value
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_order_continuity_sweep():
    g = gaussian_bump(1, 0.0, 1.0)
    x = 0.6
    ss = np.linspace(0.05, 0.995, 24)
    vals = [apply_fractional(s, g, x).value for s in ss]
    vals = np.array([apply_fractional(0.0, g, x).value] + vals
                    + [apply_fractional(1.0, g, x).value])
    assert np.max(np.abs(np.diff(vals))) < 0.25  # no blow-up toward s = 1


def test_quadrature_failure_carries_partial():
    u = gaussian_bump(1, 0.0, 1.0)
    plan = default_plan(1).scaled(rel_tol=1e-30, max_refine=0,
                                  order=4, panels_per_decade=1)
    with pytest.raises(QuadratureFailure) as exc:
        singular_integral(fractional_kernel(1, 0.5), u, 0.3, plan)
    assert np.isfinite(exc.value.partial.value)


def test_batch_matches_scalar():
    u = gaussian_bump(1, 0.0, 1.0) + gaussian_bump(1, 0.5, 0.7, -0.4)
    K = fractional_kernel(1, 0.6)
    xs = np.linspace(-1.0, 1.0, 9).reshape(-1, 1)
    vals, errs = singular_integral_batch(K, u, xs)
    for i, x in enumerate(xs):
        ref = singular_integral(K, u, x)
        assert vals[i] == pytest.approx(ref.value, abs=5 * errs[i] + 1e-12)


# -- discrete assembly ----------------------------------------------------------

@pytest.fixture(scope="module")
def lat129():
    return Lattice(1, 2.0, 129, 1.0)


def test_assembly_row_sums_annihilate_constants(lat129):
    K = fractional_kernel(1, 0.5)
    disc = assemble_discrete(K, lat129, constant(1.0, 1))
    ones = np.ones(lat129.nodes.shape[0])
    out = disc.apply_to_grid(ones, constant(1.0, 1))
    assert np.max(np.abs(out)) < 1e-12
    # matrix route: u = 1 inside, exterior = 1
    assert np.max(np.abs(disc.apply(np.ones(lat129.n_int)))) < 1e-12


def test_assembly_monotone_structure(lat129):
    K = fractional_kernel(1, 0.3)
    disc = assemble_discrete(K, lat129, constant(0.0, 1))
    off = disc.A - np.diag(np.diag(disc.A))
    assert off.max() <= 0.0
    assert np.diag(disc.A).min() > 0.0


def test_assembly_consistency_order(lat129):
    # matrix-applied values approach the quadrature reference at >= first order
    K = fractional_kernel(1, 0.5)
    u = gaussian_bump(1, 0.2, 0.9)
    x_probe = 0.25
    ref = apply_nonlocal(K, u, x_probe).value
    errs = []
    for N in [65, 129, 257]:
        lat = Lattice(1, 2.0, N, 1.0)
        disc = assemble_discrete(K, lat, u)
        vals = u(lat.nodes)
        lv = disc.apply(vals[lat.interior])
        idx = np.argmin(np.abs(lat.nodes[lat.interior][:, 0] - x_probe))
        errs.append(abs(lv[idx] - ref))
    rate = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
    assert min(rate) >= 0.9


def test_assembly_spike_sign_structure(lat129):
    K = fractional_kernel(1, 0.5)
    disc = assemble_discrete(K, lat129, constant(0.0, 1))
    spike = np.zeros(lat129.n_int)
    mid = lat129.n_int // 2
    spike[mid] = 1.0
    out = disc.apply(spike)
    assert out[mid] > 0
    others = np.delete(out, mid)
    assert np.max(others) <= 0.0


def test_assembly_2d_small():
    K = fractional_kernel(2, 0.5)
    lat = Lattice(2, 1.5, 25, 1.0)
    u = gaussian_bump(2, [0.1, 0.0], 0.8)
    disc = assemble_discrete(K, lat, u)
    # constants annihilated
    out = disc.apply_to_grid(np.ones(lat.nodes.shape[0]), constant(1.0, 2))
    assert np.max(np.abs(out)) < 1e-12
    # consistency at the center within discretization error
    vals = u(lat.nodes)
    lv = disc.apply(vals[lat.interior])
    center = np.argmin(np.linalg.norm(lat.nodes[lat.interior], axis=1))
    ref = apply_nonlocal(K, u, lat.nodes[lat.interior][center]).value
    assert abs(lv[center] - ref) < 0.05 * max(abs(ref), 1.0)


def test_export_coo_format(lat129):
    K = fractional_kernel(1, 0.5)
    disc = assemble_discrete(K, lat129, constant(0.0, 1))
    text = disc.export_coo()
    lines = text.splitlines()
    assert any(line.startswith("b ") for line in lines)
    row, col, val = lines[0].split()
    assert float(val) != 0.0
