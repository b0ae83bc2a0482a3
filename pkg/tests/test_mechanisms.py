import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from prv_accountant.mechanisms import (ChernoffError, Direction, MechanismSpec, build_prv,
                                       chernoff_eps, delta_exact, eps_upper_bound,
                                       eps_upper_bound_sum)

from oracles import gaussian_delta, mean_by_quadrature, subsampled_gaussian_delta_quad

SPECS = [
    MechanismSpec.gaussian(0.7),
    MechanismSpec.gaussian(3.0),
    MechanismSpec.laplace(0.5),
    MechanismSpec.laplace(4.0),
    MechanismSpec.subsampled_gaussian(1.0, 0.5),
    MechanismSpec.subsampled_gaussian(2.0, 0.1, Direction.ADD),
    MechanismSpec.subsampled_gaussian(0.8, 0.3, Direction.REMOVE),
    MechanismSpec.subsampled_gaussian(0.8, 0.3, Direction.ADD),
]


@pytest.mark.parametrize("bad", [
    lambda: MechanismSpec.gaussian(0.0),
    lambda: MechanismSpec.gaussian(-1.0),
    lambda: MechanismSpec.laplace(0.0),
    lambda: MechanismSpec.subsampled_gaussian(1.0, 0.0),
    lambda: MechanismSpec.subsampled_gaussian(1.0, 1.5),
    lambda: MechanismSpec.subsampled_gaussian(-1.0, 0.5),
])
def test_invalid_parameters_rejected(bad):
  with pytest.raises(ValueError):
    bad()


def test_gaussian_mean():
  assert build_prv(MechanismSpec.gaussian(1.0)).mean == pytest.approx(0.5, abs=1e-15)


def test_laplace_atoms():
  v = build_prv(MechanismSpec.laplace(1.0))
  upper_atom = 1.0 - float(v.cdf(1.0 - 1e-12))
  lower_atom = float(v.cdf(-1.0))
  assert upper_atom == pytest.approx(0.5, abs=1e-10)
  assert lower_atom == pytest.approx(math.exp(-1) / 2, abs=1e-12)
  assert float(v.cdf(1.0)) == 1.0


def test_subsampled_gaussian_floor():
  v = build_prv(MechanismSpec.subsampled_gaussian(1.0, 0.5))
  for y in (-5.0, -1.0, math.log(0.5)):
    assert float(v.cdf(y)) == 0.0
  assert float(v.cdf(math.log(0.5) + 1e-3)) > 0.0


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.describe())
def test_cdf_monotone_and_limits(spec):
  v = build_prv(spec)
  y = np.linspace(-20, 20, 8001)
  F = v.cdf(y)
  assert np.all(np.diff(F) >= 0)
  assert F[0] <= 1e-12 and F[-1] >= 1 - 1e-12
  np.testing.assert_allclose(v.cdf(y) + v.sf(y), 1.0, atol=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.describe())
def test_delta_monotone_in_unit_interval(spec):
  v = build_prv(spec)
  eps = np.linspace(0, 6, 301)
  d = np.array([delta_exact(v, e) for e in eps])
  assert np.all((d >= 0) & (d <= 1))
  assert np.all(np.diff(d) <= 1e-15)
  assert delta_exact(v, 60.0) < 1e-12


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.describe())
def test_mean_is_nonnegative_and_matches_quadrature(spec):
  v = build_prv(spec)
  assert v.mean >= 0
  lo = max(v.support_bounds[0], -40.0)
  hi = min(v.support_bounds[1], 40.0)
  assert v.mean == pytest.approx(mean_by_quadrature(v.cdf, lo, hi), abs=1e-9)


def test_gaussian_delta_closed_form():
  v = build_prv(MechanismSpec.gaussian(1.0))
  expected = stats.norm.cdf(0.5) - stats.norm.cdf(-0.5)
  assert delta_exact(v, 0.0) == pytest.approx(expected, abs=1e-15)
  for sigma in (0.5, 1.0, 3.0):
    v = build_prv(MechanismSpec.gaussian(sigma))
    for e in (0.0, 0.3, 1.0, 4.0):
      assert delta_exact(v, e) == pytest.approx(gaussian_delta(sigma, 1, e), rel=1e-10, abs=1e-300)


def test_laplace_delta():
  v = build_prv(MechanismSpec.laplace(1.0))
  assert delta_exact(v, 1.0) == 0.0
  assert delta_exact(v, 2.5) == 0.0
  assert delta_exact(v, 0.0) == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
  # direct integration of E[(1 - e^{eps - Y})_+] over w ~ Lap(1, b)
  b = 2.0
  v = build_prv(MechanismSpec.laplace(b))
  for e in (0.0, 0.2, 0.45):
    # Y > e iff w > w*; for w >= 1 the loss sits at its upper atom 1/b
    w_star = (1.0 + b * e) / 2.0
    f = lambda w: stats.laplace.pdf(w, 1.0, b) * -math.expm1(e - (abs(w) - abs(w - 1)) / b)
    val = integrate.quad(f, w_star, 1.0, epsabs=1e-15, epsrel=1e-13)[0]
    val += stats.laplace.sf(1.0, 1.0, b) * -math.expm1(e - 1.0 / b)
    assert delta_exact(v, e) == pytest.approx(val, abs=1e-14)


@pytest.mark.parametrize("direction", ["remove", "add"])
@pytest.mark.parametrize("sigma,gamma", [(1.0, 0.5), (2.0, 0.5), (0.8, 0.05), (5.0, 0.9)])
def test_subsampled_gaussian_delta_matches_quadrature(sigma, gamma, direction):
  v = build_prv(MechanismSpec.subsampled_gaussian(sigma, gamma, Direction(direction)))
  for e in (0.0, 0.1, 0.5, 1.0, 2.0):
    expected = subsampled_gaussian_delta_quad(sigma, gamma, direction, e)
    assert delta_exact(v, e) == pytest.approx(expected, rel=1e-8, abs=1e-15)


def test_full_sampling_agrees_with_gaussian():
  g = build_prv(MechanismSpec.gaussian(1.3))
  s = build_prv(MechanismSpec.subsampled_gaussian(1.3, 1.0))
  y = np.linspace(-6, 8, 1000)
  np.testing.assert_allclose(s.cdf(y), g.cdf(y), atol=1e-10)
  assert s.mean == pytest.approx(g.mean, abs=1e-10)
  assert s.truncated_mean(3.0) == pytest.approx(g.truncated_mean(3.0), abs=1e-10)


def test_delta_exact_rejects_negative_eps():
  with pytest.raises(ValueError):
    delta_exact(build_prv(MechanismSpec.gaussian(1.0)), -0.1)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.describe())
def test_truncated_mean_matches_quadrature(spec):
  v = build_prv(spec)
  for L in (0.3, 1.0, 2.5):
    mass = v.mass_within(L)
    if mass < 1e-6:
      continue
    # integration by parts of int_{(-L, L]} y dF
    num = L * float(v.cdf(L)) + L * float(v.cdf(-L)) - integrate.quad(
        lambda y: float(v.cdf(y)), -L, L, epsabs=1e-14, limit=500)[0]
    assert v.truncated_mean(L) == pytest.approx(num / mass, abs=1e-8)


def test_chernoff_gaussian_analytic():
  v = build_prv(MechanismSpec.gaussian(1.0))
  expected = 0.5 + math.sqrt(2 * math.log(1e5))
  assert eps_upper_bound(v, 1, 1e-5) == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("b", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("k", [1, 7, 100])
def test_chernoff_laplace_below_support(b, k):
  v = build_prv(MechanismSpec.laplace(b))
  assert eps_upper_bound(v, k, 1e-8) <= k / b + 1e-9


@pytest.mark.parametrize("sigma", [0.5, 1.0, 4.0])
def test_chernoff_subadditive_in_k(sigma):
  v = build_prv(MechanismSpec.gaussian(sigma))
  for k in (1, 2, 5, 30):
    for d in (1e-3, 1e-8, 1e-14):
      assert eps_upper_bound(v, k, d) <= k * eps_upper_bound(v, 1, d) + 1e-9


def _invert_exact(v, delta):
  lo, hi = 0.0, 1.0
  while delta_exact(v, hi) > delta:
    hi *= 2
  for _ in range(200):
    mid = (lo + hi) / 2
    lo, hi = (lo, mid) if delta_exact(v, mid) <= delta else (mid, hi)
  return hi


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.describe())
@pytest.mark.parametrize("delta", [1e-2, 1e-6, 1e-12])
def test_chernoff_sound_at_k1(spec, delta):
  v = build_prv(spec)
  assert eps_upper_bound(v, 1, delta) >= _invert_exact(v, delta) - 1e-9


@pytest.mark.parametrize("sigma,gamma", [(1.0, 0.5), (0.7, 0.2), (3.0, 0.05)])
def test_subsampled_log_mgf_bounds_both_directions(sigma, gamma):
  """log E[e^{lam Y}] by quadrature never exceeds the reported bound."""
  for direction in ("remove", "add"):
    v = build_prv(MechanismSpec.subsampled_gaussian(sigma, gamma, Direction(direction)))
    for lam in (0.1, 0.5, 1.0, 2.3, 4.0):
      if direction == "remove":
        dens = lambda w: ((1 - gamma) * stats.norm.pdf(w / sigma) +
                          gamma * stats.norm.pdf((w - 1) / sigma)) / sigma
        sign = 1.0
      else:
        dens = lambda w: stats.norm.pdf(w / sigma) / sigma
        sign = -1.0
      f = lambda w: dens(w) * math.exp(sign * lam * float(v._loss(w)))
      exact = math.log(integrate.quad(f, -60 * sigma, 60 * sigma, limit=500)[0])
      assert v.log_mgf(lam) >= exact - 1e-10


def test_chernoff_sum_matches_homogeneous():
  v = build_prv(MechanismSpec.gaussian(2.0))
  assert eps_upper_bound_sum([v] * 5, 1e-6) == pytest.approx(eps_upper_bound(v, 5, 1e-6), rel=1e-9)


@pytest.mark.parametrize("k", [1, 2, 8])
def test_radius_covers_lower_tail_of_add_direction(k):
  # the add PRV is bounded above, but its lower tail is governed by the remove PRV
  add = build_prv(MechanismSpec.subsampled_gaussian(2.0, 0.5, Direction.ADD))
  assert add.dual().direction is Direction.REMOVE
  r = eps_upper_bound(add, k, 1e-9)
  assert r > k * add.support_bounds[1]
  if k == 1:
    assert float(add.cdf(-r)) <= 1e-9
  g = build_prv(MechanismSpec.gaussian(1.0))
  assert g.dual() is g


def test_chernoff_divergent_mgf():
  with pytest.raises(ChernoffError):
    chernoff_eps(lambda lam: math.inf, 1, 1e-5)


@settings(max_examples=40, deadline=None)
@given(sigma=st.floats(0.3, 20), gamma=st.floats(0.01, 1.0),
       y1=st.floats(-3, 10), y2=st.floats(-3, 10))
def test_subsampled_cdf_monotone_property(sigma, gamma, y1, y2):
  v = build_prv(MechanismSpec.subsampled_gaussian(sigma, gamma))
  lo, hi = min(y1, y2), max(y1, y2)
  assert float(v.cdf(lo)) <= float(v.cdf(hi))
