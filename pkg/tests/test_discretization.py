import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prv_accountant.discretization import (DiscretePrv, DiscretizationError, discrete_cdf,
                                           discretize, half_count, rediscretize)
from prv_accountant.mechanisms import MechanismSpec, build_prv


def atoms_cdf(xs, ws):
  xs = np.asarray(xs, float)
  ws = np.asarray(ws, float)

  def cdf(y):
    y = np.asarray(y, float)
    return (ws[None, :] * (xs[None, :] <= y[..., None])).sum(-1)

  return cdf


def test_point_mass_recovered_exactly():
  p = discretize(atoms_cdf([0.3], [1.0]), 0.3, 0.5, 1.75)
  assert p.n == 3
  assert p.q[1 + p.n] == 1.0 and p.q.sum() == 1.0
  assert p.mu == pytest.approx(-0.2, abs=1e-15)
  assert p.points[1 + p.n] == pytest.approx(0.3, abs=1e-15)


def test_symmetric_input_has_zero_shift():
  cdf = atoms_cdf([-0.7, 0.7, -0.2, 0.2], [0.1, 0.1, 0.4, 0.4])
  p = discretize(cdf, 0.0, 0.25, 1.125)
  assert abs(p.mu) < 1e-15


def test_gaussian_truncated_mean_preserved():
  v = build_prv(MechanismSpec.gaussian(1.0))
  L, h = 10.25, 0.5
  p = discretize(v.cdf, v.truncated_mean(L), h, L, sf=v.sf)
  assert abs(p.mean - v.truncated_mean(L)) <= 1e-12
  assert abs(p.q.sum() - 1.0) <= 1e-12


def test_rejects_off_grid_truncation():
  with pytest.raises(DiscretizationError):
    half_count(0.5, 1.6)
  with pytest.raises(DiscretizationError):
    half_count(0.5, 0.25)  # n would be 0


def test_rejects_empty_support():
  with pytest.raises(DiscretizationError):
    discretize(atoms_cdf([5.0], [1.0]), 5.0, 0.5, 1.75)


def test_rejects_inconsistent_mean():
  with pytest.raises(DiscretizationError):
    discretize(atoms_cdf([0.0], [1.0]), 0.4, 0.5, 1.75)


def test_rejects_nonmonotone_cdf():
  bad = lambda y: np.where(np.asarray(y) > 0, 0.3, 0.6)
  with pytest.raises(DiscretizationError):
    discretize(bad, 0.0, 0.5, 1.75)


def test_tiny_negative_noise_is_clamped():
  base = atoms_cdf([0.0, 0.5], [0.5, 0.5])
  noisy = lambda y: base(y) - 5e-17 * (np.asarray(y) > 1.0)
  p = discretize(noisy, 0.25, 0.5, 1.75)
  assert np.all(p.q >= 0) and p.q.sum() == pytest.approx(1.0, abs=1e-15)


def test_discrete_cdf_examples():
  p = DiscretePrv.point_mass(0.0, 1.0, 2.5)
  F = discrete_cdf(p)
  assert F(-1e-9) == 0.0 and F(0.0) == 1.0
  q = np.zeros(5)
  q[1] = q[3] = 0.5
  p = DiscretePrv(h=1.0, mu=0.0, n=2, q=q)
  assert discrete_cdf(p)(0.0) == 0.5
  v = build_prv(MechanismSpec.gaussian(1.0))
  g = discretize(v.cdf, v.truncated_mean(10.25), 0.5, 10.25, sf=v.sf)
  assert discrete_cdf(g)(g.L) == pytest.approx(1.0, abs=1e-12)


def test_boundary_atom_goes_to_lower_bucket():
  # atom at 0.25 = boundary between buckets 0 and 1 of the h=0.5 grid
  src = DiscretePrv.point_mass(0.25, 0.25, 1.875)
  out = rediscretize(src, 0.5, 2.25)
  assert out.q[out.n] == 1.0 and out.mu == pytest.approx(0.25)
  via_cdf = discretize(discrete_cdf(src), src.mean, 0.5, 2.25)
  assert out == via_cdf


def test_idempotent_on_grid_aligned_input():
  rng = np.random.default_rng(3)
  q = rng.random(41)
  q /= q.sum()
  # place the mean-preserving shift at zero by construction
  p = DiscretePrv(h=0.1, mu=0.0, n=20, q=q)
  again = discretize(discrete_cdf(p), p.mean, 0.1, p.L)
  np.testing.assert_allclose(again.q, p.q, atol=1e-12)
  assert abs(again.mu) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 60), h=st.floats(1e-3, 2.0),
       atoms=st.integers(1, 30))
def test_random_atom_inputs_preserve_mass_and_mean(seed, n, h, atoms):
  rng = np.random.default_rng(seed)
  L = (n + 0.5) * h
  xs = rng.uniform(-L, L, atoms)
  xs[xs == -L] = L
  ws = rng.random(atoms)
  ws /= ws.sum()
  mean = float(np.dot(xs, ws))
  p = discretize(atoms_cdf(xs, ws), mean, h, L)
  assert abs(p.q.sum() - 1.0) <= 1e-12
  assert abs(p.mean - mean) <= 1e-12 * max(1.0, abs(mean), L)
  assert np.all(p.points > -L - 1e-12) and np.all(p.points <= L + 1e-12)
  assert -h / 2 < p.mu <= h / 2


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n_src=st.integers(2, 80), factor=st.integers(1, 7))
def test_rediscretize_matches_cdf_route(seed, n_src, factor):
  rng = np.random.default_rng(seed)
  h = 0.01
  q = rng.random(2 * n_src + 1)
  q /= q.sum()
  src = DiscretePrv(h=h, mu=float(rng.uniform(-h / 2 + 1e-12, h / 2)), n=n_src, q=q)
  h2 = factor * h
  n2 = int(np.ceil(src.L / h2 - 0.5)) + 1
  L2 = (n2 + 0.5) * h2
  fast = rediscretize(src, h2, L2)
  slow = discretize(discrete_cdf(src), src.mean, h2, L2)
  np.testing.assert_allclose(fast.q, slow.q, atol=1e-13)
  assert fast.mu == pytest.approx(slow.mu, abs=1e-12)


def test_rediscretize_rejects_wider_input():
  src = DiscretePrv.point_mass(0.0, 0.1, 2.05)
  with pytest.raises(DiscretizationError):
    rediscretize(src, 0.1, 1.05)


def test_discrete_prv_is_immutable_and_validated():
  p = DiscretePrv.point_mass(0.0, 1.0, 1.5)
  with pytest.raises(ValueError):
    p.q[0] = 1.0
  with pytest.raises(ValueError):
    DiscretePrv(h=1.0, mu=0.6, n=1, q=[0, 1, 0])
  with pytest.raises(ValueError):
    DiscretePrv(h=1.0, mu=0.0, n=1, q=[0, 1])
