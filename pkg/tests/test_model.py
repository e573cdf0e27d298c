import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riscf import model
from riscf.model import ChannelSet, CsiEstimate, Dimensions

from conftest import random_instance, random_precoders, unit_phases


# smoothed l0 ----------------------------------------------------------------

def test_l0_anchor_values():
    assert model.l0_smooth(0.0, 1e-3)[0] == 0.0
    assert model.l0_smooth(1e-3, 1e-3)[0] == pytest.approx(0.5, abs=1e-15)
    # (2/pi) atan(1000), evaluated independently at 30 digits
    assert model.l0_smooth(1.0, 1e-3)[0] == pytest.approx(0.999363380439838882, abs=1e-15)


@given(st.floats(1e-6, 10.0), st.floats(1e-4, 1.0))
@settings(max_examples=60, deadline=None)
def test_l0_gradient_matches_central_difference(x, varpi):
    # step tied to the local scale keeps truncation and round-off below 1e-6
    h = min(1e-4 * max(x, varpi), x / 2)
    fp, _ = model.l0_smooth(x + h, varpi)
    fm, _ = model.l0_smooth(x - h, varpi)
    _, g = model.l0_smooth(x, varpi)
    assert (fp - fm) / (2 * h) == pytest.approx(g, rel=1e-6)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=20))
def test_l0_is_monotone_and_bounded(xs):
    xs = np.sort(np.array(xs))
    f, g = model.l0_smooth(xs, 1e-3)
    assert np.all(np.diff(f) >= 0)
    assert np.all((f >= 0) & (f < 1))
    assert np.all(g > 0)


def test_l0_rejects_bad_input():
    with pytest.raises(ValueError):
        model.l0_smooth(-1.0, 1e-3)
    with pytest.raises(ValueError):
        model.l0_smooth(1.0, 0.0)


# layout helpers -------------------------------------------------------------

def test_stack_roundtrip(rng):
    W = random_precoders(rng, 3, 4, 2)
    Wk = model.stacked(W)
    assert Wk.shape == (4, 6)
    assert np.array_equal(model.unstack(Wk, 3), W)
    assert np.array_equal(Wk[1, 2:4], W[1, 1])


def test_cascade_channel_is_diag_times_G(rng):
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    G = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    assert np.allclose(model.cascade_channel(h, G), np.diag(h.conj()) @ G)
    with pytest.raises(ValueError):
        model.cascade_channel(h, G[:3])


def test_channelset_cascade_matches_per_link(rng):
    ch, _ = random_instance(rng, N=2, Nt=3, L=2, M=3, K=2)
    z = ch.cascaded()
    for n in range(2):
        for k in range(2):
            blocks = [model.cascade_channel(ch.ris_user[l, k], ch.ap_ris[n, l]) for l in range(2)]
            assert np.allclose(z[n, k], np.vstack(blocks))


def test_effective_channel_agrees_with_loop(rng):
    ch, csi = random_instance(rng)
    v = unit_phases(rng, 8)
    H = csi.effective(v)
    hd, Z = csi.stacked_direct(), csi.stacked_cascaded()
    for k in range(2):
        assert np.allclose(H[k], model.effective_channel(hd[k], Z[k], v))


def test_exact_rate_two_user_by_hand():
    H = np.array([[1.0, 0.0], [0.0, 2.0]], complex)
    Wk = np.array([[1.0, 1.0], [0.0, 1.0]], complex)
    sinr, rate = model.sinr_and_rate(0, H, Wk, np.array([1.0, 1.0]))
    assert sinr == pytest.approx(1.0 / (0.0 + 1.0))
    sinr, rate = model.sinr_and_rate(1, H, Wk, np.array([1.0, 1.0]))
    assert sinr == pytest.approx(4.0 / (4.0 + 1.0))
    assert rate == pytest.approx(math.log2(1.8))


def test_dimension_validation():
    with pytest.raises(ValueError):
        Dimensions(0, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        ChannelSet(np.ones((1, 2, 1)), np.ones((1, 3, 2)), np.ones((1, 1, 2, 1)), np.ones(2))
    with pytest.raises(ValueError):
        ChannelSet(np.ones((1, 1, 1)), np.ones((1, 1, 2)), np.ones((1, 1, 2, 1)), np.array([np.nan]))


def test_csi_aggregated_radii(rng):
    _, csi = random_instance(rng, N=3, K=2)
    assert np.allclose(csi.eps_d, np.sqrt((csi.eps_direct ** 2).sum(0)))
    assert np.allclose(csi.eps, csi.eps_d + np.sqrt(8) * csi.eps_c)
    assert np.all(csi.without_radii().eps == 0)
    with pytest.raises(ValueError):
        CsiEstimate(csi.direct_hat, csi.cascaded_hat, -csi.eps_direct, csi.eps_cascaded, csi.noise_power)


# worst-case bounds ----------------------------------------------------------

def test_worst_case_signal_floor():
    h = np.array([1.0, 0.0], complex)
    w = np.array([0.1, 0.0], complex)
    assert model.worst_case_signal(h, w, 0.5) == pytest.approx(0.05)
    assert model.worst_case_signal(h, w, 20.0) == 0.0
    with pytest.raises(ValueError):
        model.worst_case_signal(h, w, -1.0)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_construction_attains_closed_form(seed):
    rng = np.random.default_rng(seed)
    _, csi = random_instance(rng, radius_frac=0.3)
    v = unit_phases(rng, 8)
    W = random_precoders(rng, 2, 2, 2)
    Wk = model.stacked(W)
    hd, Z = csi.stacked_direct(), csi.stacked_cascaded()
    for k in range(2):
        dh, dZ = model.worst_case_perturbation(hd[k], Z[k], v, Wk[k], csi.eps_d[k], csi.eps_c[k])
        assert np.linalg.norm(dh) <= csi.eps_d[k] * (1 + 1e-12)
        assert np.linalg.norm(dZ) <= csi.eps_c[k] * (1 + 1e-12)
        attained = abs(np.vdot(model.effective_channel(hd[k] + dh, Z[k] + dZ, v), Wk[k]))
        closed = model.worst_case_signal(model.effective_channel(hd[k], Z[k], v), Wk[k], csi.eps[k])
        assert attained == pytest.approx(closed, rel=1e-8, abs=1e-12)


def test_construction_needs_nonzero_w(rng):
    _, csi = random_instance(rng)
    with pytest.raises(ValueError):
        model.worst_case_perturbation(csi.stacked_direct()[0], csi.stacked_cascaded()[0],
                                      unit_phases(rng, 8), np.zeros(4), 0.1, 0.1)


def test_bounds_are_conservative_against_sampling(rng):
    _, csi = random_instance(rng, radius_frac=0.2)
    v = unit_phases(rng, 8)
    W = random_precoders(rng, 2, 2, 2)
    sampled = model.sampled_worst_case(W, v, csi, 4000, rng)
    bound, _ = model.worst_case_sum_rate(W, v, csi)
    assert np.all(bound <= sampled + 1e-12)


def test_sampled_includes_nominal(rng):
    _, csi = random_instance(rng)
    v = unit_phases(rng, 8)
    W = random_precoders(rng, 2, 2, 2)
    nominal = model.exact_rates(csi.effective(v), W, csi.noise_power)
    s = model.sampled_worst_case(W, v, csi, 1, rng, include_nominal=True)
    assert np.allclose(s, nominal)
    with pytest.raises(ValueError):
        model.sampled_worst_case(W, v, csi, 0, rng)


def test_zero_radii_bound_equals_exact(rng):
    _, csi = random_instance(rng)
    csi = csi.without_radii()
    v = unit_phases(rng, 8)
    W = random_precoders(rng, 2, 2, 2)
    exact = model.exact_rates(csi.effective(v), W, csi.noise_power)
    bound, _ = model.worst_case_sum_rate(W, v, csi)
    assert np.allclose(bound, exact, rtol=1e-12)


def test_interference_bound_single_user_is_zero(rng):
    h = rng.standard_normal(4) + 0j
    assert model.interference_upper_bound(h, np.zeros((4, 0)), 0.1, 0.1, 4, 2) == 0.0


def test_per_ap_power(rng):
    W = random_precoders(rng, 3, 2, 2)
    assert np.allclose(model.per_ap_power(W), [np.sum(np.abs(W[n]) ** 2) for n in range(3)])
