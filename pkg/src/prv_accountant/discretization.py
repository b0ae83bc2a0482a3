"""Mean-preserving discretization of a random variable onto a uniform grid."""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

# Rounding noise in CDF differences below this is clamped to zero.
NEGATIVE_MASS_TOL = 1e-16
SHIFT_TOL = 1e-9


class DiscretizationError(ValueError):
  pass


def half_count(h: float, L: float) -> int:
  """n such that L = (n + 1/2) h, validating that n is a positive integer."""
  if not h > 0 or not L > 0:
    raise DiscretizationError(f"mesh and truncation must be positive, got h={h}, L={L}")
  x = L / h - 0.5
  n = int(round(x))
  if n < 1 or abs(x - n) > 1e-7 * max(1.0, x):
    raise DiscretizationError(f"L={L!r} is not in h*(1/2 + Z>0) for h={h!r}")
  return n


@dataclasses.dataclass(frozen=True, eq=False)
class DiscretePrv:
  """A pmf on the grid ``mu + h*i`` for ``i = -n..n``.

  ``q[j]`` holds the mass of index ``i = j - n``. Every support point lies in
  ``(-L, L]`` with ``L = (n + 1/2) h`` and ``mu`` in ``(-h/2, h/2]``.
  """
  h: float
  mu: float
  n: int
  q: np.ndarray

  def __post_init__(self):
    q = np.asarray(self.q, dtype=float)
    if q.ndim != 1 or q.size != 2 * self.n + 1:
      raise ValueError(f"pmf must have 2n+1={2 * self.n + 1} entries, got shape {q.shape}")
    if not (-self.h / 2 < self.mu <= self.h / 2):
      raise ValueError(f"shift {self.mu} outside (-h/2, h/2] for h={self.h}")
    if (q < 0).any():
      raise ValueError("pmf has negative entries")
    q = q.copy() if q is self.q else q
    q.setflags(write=False)
    object.__setattr__(self, "q", q)

  @property
  def L(self) -> float:
    return (self.n + 0.5) * self.h

  @property
  def size(self) -> int:
    """Number of buckets, 2n + 1."""
    return self.q.size

  @property
  def indices(self) -> np.ndarray:
    return np.arange(-self.n, self.n + 1)

  @property
  def points(self) -> np.ndarray:
    return self.indices * self.h + self.mu

  @property
  def mass(self) -> float:
    return float(self.q.sum())

  @property
  def mean(self) -> float:
    return float(np.dot(self.q, self.points))

  def same_grid(self, other: "DiscretePrv") -> bool:
    return self.n == other.n and math.isclose(self.h, other.h, rel_tol=1e-12, abs_tol=0.0)

  def __eq__(self, other):
    if not isinstance(other, DiscretePrv):
      return NotImplemented
    return (self.h == other.h and self.mu == other.mu and self.n == other.n
            and np.array_equal(self.q, other.q))

  __hash__ = None

  @classmethod
  def point_mass(cls, x: float, h: float, L: float) -> "DiscretePrv":
    """The pmf with all mass at ``x`` (which must lie in (-L, L])."""
    n = half_count(h, L)
    if not -L < x <= L:
      raise ValueError(f"point {x} outside (-{L}, {L}]")
    i = math.ceil(x / h - 0.5)
    mu = x - i * h
    q = np.zeros(2 * n + 1)
    q[i + n] = 1.0
    return _canonical(h, mu, n, q)


def _canonical(h: float, mu: float, n: int, q: np.ndarray) -> DiscretePrv:
  """Bring mu into (-h/2, h/2] by rotating indices (exact modulo 2L)."""
  if mu <= -h / 2:
    mu += h
    q = np.roll(q, -1)
  elif mu > h / 2:
    mu -= h
    q = np.roll(q, 1)
  return DiscretePrv(h=h, mu=mu, n=n, q=q)


def _clamp_and_normalize(q: np.ndarray) -> np.ndarray:
  neg = q < 0
  if neg.any():
    worst = float(q[neg].min())
    if worst < -NEGATIVE_MASS_TOL:
      raise DiscretizationError(f"CDF is not monotone: bucket mass {worst:.3e}")
    q = np.where(neg, 0.0, q)
  total = q.sum()
  if not total > 0:
    raise DiscretizationError("no probability mass inside (-L, L]; truncation too small?")
  return q / total


def _finish(q: np.ndarray, mean: float, h: float, n: int) -> DiscretePrv:
  q = _clamp_and_normalize(q)
  mu = mean - h * float(np.dot(np.arange(-n, n + 1), q))
  if abs(mu) > h / 2 + SHIFT_TOL:
    raise DiscretizationError(
        f"mean-preserving shift {mu:.6g} exceeds h/2={h / 2:.6g}; mean and CDF disagree")
  return _canonical(h, mu, n, q)


def bucket_edges(h: float, n: int) -> np.ndarray:
  """Edges (i - 1/2) h for i = -n..n+1; bucket i is (edge_i, edge_{i+1}]."""
  return (np.arange(-n, n + 2) - 0.5) * h


def discretize(cdf: Callable, mean: float, h: float, L: float,
               sf: Optional[Callable] = None) -> DiscretePrv:
  """Discretize a random variable supported in (-L, L] onto mesh ``h``.

  Bucket ``i`` receives the mass of ``(ih - h/2, ih + h/2]``; the pmf is then
  normalized and shifted by ``mu`` so that its mean equals ``mean``. Mass
  outside (-L, L] is discarded by the normalization, which is how callers
  condition a variable on ``|Y| <= L``.

  Args:
    cdf: right-continuous CDF, vectorized over numpy arrays.
    mean: exact mean of the (conditioned) input variable.
    h: mesh size.
    L: truncation, must satisfy L = (n + 1/2) h for a positive integer n.
    sf: optional survival function ``1 - cdf`` computed without cancellation;
      used for buckets in the upper half of the distribution.
  """
  n = half_count(h, L)
  edges = bucket_edges(h, n)
  F = np.asarray(cdf(edges), dtype=float)
  q = np.diff(F)
  if sf is not None:
    S = np.asarray(sf(edges), dtype=float)
    upper = F[1:] > 0.5
    q = np.where(upper, S[:-1] - S[1:], q)
  return _finish(q, mean, h, n)


def discrete_cdf(p: DiscretePrv) -> Callable:
  """Right-continuous CDF of ``p``; an atom on a query point counts as <= it."""
  points = p.points
  cums = np.concatenate([[0.0], np.cumsum(p.q)])

  def cdf(x):
    idx = np.searchsorted(points, np.asarray(x, dtype=float), side="right")
    out = cums[idx]
    return float(out) if np.ndim(out) == 0 else out

  return cdf


def rediscretize(p: DiscretePrv, h: float, L: float) -> DiscretePrv:
  """``discretize(discrete_cdf(p), p.mean, h, L)`` computed by direct binning.

  Each atom goes to the bucket whose half-open interval contains it, with the
  same boundary convention as the CDF route.
  """
  n = half_count(h, L)
  if p.L > L * (1 + 1e-12):
    raise DiscretizationError(f"input support (-{p.L}, {p.L}] exceeds (-{L}, {L}]")
  edges = bucket_edges(h, n)
  pts = p.points
  j = np.searchsorted(edges, pts, side="left") - 1
  j = np.clip(j, 0, 2 * n)
  q = np.bincount(j, weights=p.q, minlength=2 * n + 1)
  return _finish(q, p.mean, h, n)
