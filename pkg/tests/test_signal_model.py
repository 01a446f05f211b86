import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teunroll import signal_model as sm
from teunroll.linops import normal_map_of, power_iteration_norm

from oracles import dense_from_probes


def _random_image(rng, h, w):
    return sm.ComplexImage(rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w)))


def _random_kspace(rng, c, h, w):
    return sm.KSpaceData(rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w)))


def _unit_sens(h, w):
    return sm.CoilSensitivities(np.ones((1, h, w), dtype=complex))


# -- forward / adjoint -------------------------------------------------------

def test_parseval_single_coil_full_mask():
    rng = np.random.default_rng(0)
    E = sm.EncodingOperator(sm.make_equispaced_mask(16, 16, 1, 0), _unit_sens(16, 16))
    x = _random_image(rng, 16, 16)
    ratio = np.linalg.norm(E.forward(x).data) / np.linalg.norm(x.data)
    assert abs(ratio - 1.0) <= 1e-12


def test_normal_is_identity_on_full_mask_single_coil():
    rng = np.random.default_rng(1)
    E = sm.EncodingOperator(sm.make_equispaced_mask(12, 12, 1, 0), _unit_sens(12, 12))
    x = _random_image(rng, 12, 12)
    back = E.normal(x)
    assert np.linalg.norm(back.data - x.data) <= 1e-12 * np.linalg.norm(x.data)
    # adjoint of forward also inverts directly (unitary map)
    rt = E.adjoint(E.forward(x))
    assert np.linalg.norm(rt.data - x.data) <= 1e-12 * np.linalg.norm(x.data)


def test_forward_matches_dense_probe_matrix():
    rng = np.random.default_rng(2)
    mask = sm.make_equispaced_mask(8, 8, 2, 0)
    sens = sm.make_smooth_sensitivities(8, 8, 2, seed=3)
    E = sm.EncodingOperator(mask, sens)

    def apply_flat(v):
        return E.forward(sm.ComplexImage(v.reshape(8, 8))).data.ravel()

    dense = dense_from_probes(apply_flat, 64)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    direct = apply_flat(x)
    assert np.linalg.norm(dense @ x - direct) <= 1e-10 * np.linalg.norm(direct)


def test_adjoint_identity_and_zero():
    rng = np.random.default_rng(4)
    mask = sm.make_random_mask(10, 12, 3, 2, seed=5)
    sens = sm.make_smooth_sensitivities(10, 12, 3, seed=6)
    E = sm.EncodingOperator(mask, sens)
    x = _random_image(rng, 10, 12)
    y = _random_kspace(rng, 3, 10, 12)
    lhs = np.vdot(E.forward(x).data, y.data)
    rhs = np.vdot(x.data, E.adjoint(y).data)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x.data) * np.linalg.norm(y.data)

    zero = sm.KSpaceData(np.zeros((3, 10, 12), dtype=complex))
    assert np.all(E.adjoint(zero).data == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_adjoint_identity_property(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(8, 17)), int(rng.integers(8, 17))
    coils = int(rng.integers(1, 4))
    mask = sm.make_random_mask(h, w, int(rng.integers(1, 4)), 2, seed=seed)
    sens = sm.make_smooth_sensitivities(h, w, coils, seed=seed + 1)
    E = sm.EncodingOperator(mask, sens)
    x = _random_image(rng, h, w)
    y = _random_kspace(rng, coils, h, w)
    lhs = np.vdot(E.forward(x).data, y.data)
    rhs = np.vdot(x.data, E.adjoint(y).data)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x.data) * np.linalg.norm(y.data)


def test_mask_idempotence_and_zero_fill():
    rng = np.random.default_rng(7)
    mask = sm.make_equispaced_mask(8, 8, 2, 2)
    sens = sm.make_smooth_sensitivities(8, 8, 2, seed=8)
    E = sm.EncodingOperator(mask, sens)
    y = E.forward(_random_image(rng, 8, 8))
    assert np.all(y.data[:, ~mask.pattern] == 0)
    remasked = np.where(mask.pattern[None], y.data, 0.0)
    np.testing.assert_array_equal(remasked, y.data)


def test_normal_operator_is_psd():
    rng = np.random.default_rng(20)
    E = sm.EncodingOperator(sm.make_random_mask(12, 12, 3, 2, seed=21),
                            sm.make_smooth_sensitivities(12, 12, 3, seed=22))
    for _ in range(20):
        x = _random_image(rng, 12, 12)
        quad = np.vdot(x.data, E.normal(x).data)
        assert abs(quad.imag) <= 1e-10 * abs(quad.real + 1e-30)
        assert quad.real >= -1e-12


def test_dimension_mismatch_errors():
    E = sm.EncodingOperator(sm.make_equispaced_mask(8, 8, 2, 2),
                            sm.make_smooth_sensitivities(8, 8, 2, seed=0))
    with pytest.raises(ValueError):
        E.forward(sm.ComplexImage(np.ones((4, 4))))
    with pytest.raises(ValueError):
        E.adjoint(sm.KSpaceData(np.ones((2, 4, 4), dtype=complex)))
    with pytest.raises(ValueError):
        sm.EncodingOperator(sm.make_equispaced_mask(6, 6, 2, 2),
                            sm.make_smooth_sensitivities(8, 8, 2, seed=0))


# -- masks --------------------------------------------------------------

def test_equispaced_mask_enumeration():
    mask = sm.make_equispaced_mask(4, 16, 4, 4)
    expected = sorted(set(range(0, 16, 4)) | {6, 7, 8, 9})
    np.testing.assert_array_equal(mask.sampled_columns(), expected)
    assert len(expected) == 7

    full = sm.make_equispaced_mask(4, 10, 1, 0)
    assert full.pattern.all()

    mask = sm.make_equispaced_mask(4, 368, 4, 24)
    start = 368 // 2 - 12
    expected = sorted(set(range(0, 368, 4)) | set(range(start, start + 24)))
    np.testing.assert_array_equal(mask.sampled_columns(), expected)


def test_equispaced_mask_spacing_invariant():
    mask = sm.make_equispaced_mask(4, 64, 5, 8)
    cols = mask.sampled_columns()
    start = 64 // 2 - 4
    acs = set(range(start, start + 8))
    non_acs = sorted(set(cols) - acs)
    # non-ACS sampled columns must sit on the stride-R grid
    assert all(c % 5 == 0 for c in non_acs)


def test_equispaced_mask_errors():
    with pytest.raises(ValueError):
        sm.make_equispaced_mask(4, 8, 0, 0)
    with pytest.raises(ValueError):
        sm.make_equispaced_mask(4, 8, 2, 9)


def test_random_mask_counting_and_determinism():
    m1 = sm.make_random_mask(4, 64, 4, 8, seed=7)
    m2 = sm.make_random_mask(4, 64, 4, 8, seed=7)
    np.testing.assert_array_equal(m1.pattern, m2.pattern)
    cols = m1.sampled_columns()
    assert cols.size == 16
    start = 64 // 2 - 4
    assert set(range(start, start + 8)) <= set(cols.tolist())

    assert sm.make_random_mask(4, 12, 1, 0, seed=0).pattern.all()
    with pytest.raises(ValueError):
        sm.make_random_mask(4, 16, 8, 4, seed=0)  # budget 2 < acs 4


# -- generators ---------------------------------------------------------

def test_phantom_properties():
    zero = sm.make_phantom(16, 16, 0, seed=0)
    assert np.all(zero.data == 0)
    a = sm.make_phantom(24, 20, 5, seed=3)
    b = sm.make_phantom(24, 20, 5, seed=3)
    np.testing.assert_array_equal(a.data, b.data)
    # each ellipse contributes at most 1.0, so the magnitude is bounded
    for seed in range(10):
        img = sm.make_phantom(16, 16, 6, seed=seed)
        assert np.abs(img.data).max() <= 6.0
    with pytest.raises(ValueError):
        sm.make_phantom(4, 16, 1, seed=0)


def test_sensitivity_normalization_and_norm_bound():
    single = sm.make_smooth_sensitivities(12, 12, 1, seed=0)
    np.testing.assert_allclose(np.abs(single.maps[0]), 1.0, atol=1e-12)
    sens = sm.make_smooth_sensitivities(16, 16, 4, seed=1)
    ssq = np.sum(np.abs(sens.maps) ** 2, axis=0)
    assert np.max(np.abs(ssq - 1.0)) <= 1e-12

    E = sm.EncodingOperator(sm.make_equispaced_mask(16, 16, 2, 4), sens)
    norm = power_iteration_norm(normal_map_of(E), iters=50, seed=2)
    assert norm <= 1.0 + 1e-9


def test_add_noise_moments_and_masking():
    rng = np.random.default_rng(0)
    base = sm.KSpaceData(np.zeros((1, 1000, 1000), dtype=complex))
    noisy = sm.add_noise(base, 0.7, seed=1)
    assert abs(np.std(noisy.data.real) - 0.7) <= 0.007
    assert abs(np.std(noisy.data.imag) - 0.7) <= 0.007

    mask = sm.make_equispaced_mask(16, 16, 4, 2)
    sens = sm.make_smooth_sensitivities(16, 16, 2, seed=3)
    E = sm.EncodingOperator(mask, sens)
    y = E.forward(sm.ComplexImage(rng.standard_normal((16, 16)) + 0j))
    noisy = sm.add_noise(y, 0.5, seed=4, mask=mask)
    assert np.all(noisy.data[:, ~mask.pattern] == 0)
    assert np.any(noisy.data[:, mask.pattern] != y.data[:, mask.pattern])

    same = sm.add_noise(y, 0.0, seed=5, mask=mask)
    np.testing.assert_array_equal(same.data, y.data)
