"""Privacy loss random variables of the supported additive-noise mechanisms.

Every mechanism is described by a dominating pair ``(P, Q)`` of output
distributions on adjacent datasets with sensitivity fixed to 1. The privacy
loss random variable is ``Y = log(Q(w) / P(w))`` with ``w ~ Q``; all of the
accountants only ever need ``Y`` (its CDF, mean and MGF), never the matching
``X`` member of the pair.
"""

from __future__ import annotations

import abc
import dataclasses
import enum
import functools
import math
from typing import Tuple

import numpy as np
from scipy import integrate, optimize, special

_LOG_HALF = math.log(0.5)


class Mechanism(enum.Enum):
  LAPLACE = "laplace"
  GAUSSIAN = "gaussian"
  SUBSAMPLED_GAUSSIAN = "subsampled-gaussian"


class Direction(enum.Enum):
  """Adjacency direction for the subsampled Gaussian mechanism.

  REMOVE: P is the plain Gaussian N(0, sigma^2) and Q the mixture
    (1 - gamma) N(0, sigma^2) + gamma N(1, sigma^2).
  ADD: the roles of P and Q are swapped.
  """
  REMOVE = "remove"
  ADD = "add"


@dataclasses.dataclass(frozen=True)
class MechanismSpec:
  """Parameters of one mechanism. Use the named constructors."""
  mechanism: Mechanism
  scale: float | None = None
  sigma: float | None = None
  sampling_prob: float | None = None
  direction: Direction = Direction.REMOVE

  def __post_init__(self):
    if self.mechanism is Mechanism.LAPLACE:
      if self.scale is None or not self.scale > 0 or not math.isfinite(self.scale):
        raise ValueError(f"Laplace scale must be positive, got {self.scale}")
    else:
      if self.sigma is None or not self.sigma > 0 or not math.isfinite(self.sigma):
        raise ValueError(f"sigma must be positive, got {self.sigma}")
    if self.mechanism is Mechanism.SUBSAMPLED_GAUSSIAN:
      gamma = self.sampling_prob
      if gamma is None or not 0 < gamma <= 1:
        raise ValueError(f"sampling_prob must lie in (0, 1], got {gamma}")

  @classmethod
  def laplace(cls, scale: float) -> "MechanismSpec":
    return cls(Mechanism.LAPLACE, scale=float(scale))

  @classmethod
  def gaussian(cls, sigma: float) -> "MechanismSpec":
    return cls(Mechanism.GAUSSIAN, sigma=float(sigma))

  @classmethod
  def subsampled_gaussian(cls, sigma: float, sampling_prob: float,
                          direction: Direction = Direction.REMOVE) -> "MechanismSpec":
    return cls(Mechanism.SUBSAMPLED_GAUSSIAN, sigma=float(sigma),
               sampling_prob=float(sampling_prob), direction=Direction(direction))

  def with_direction(self, direction: Direction) -> "MechanismSpec":
    return dataclasses.replace(self, direction=Direction(direction))

  def params(self) -> dict:
    """JSON-friendly parameter dictionary (only the fields that apply)."""
    if self.mechanism is Mechanism.LAPLACE:
      return {"scale": self.scale}
    if self.mechanism is Mechanism.GAUSSIAN:
      return {"sigma": self.sigma}
    return {"sigma": self.sigma, "sampling_prob": self.sampling_prob,
            "direction": self.direction.value}

  def describe(self) -> str:
    body = ",".join(f"{k}={v}" for k, v in self.params().items())
    return f"{self.mechanism.value}({body})"


class PrvView(abc.ABC):
  """Analytic access to the privacy loss random variable Y of a mechanism.

  Instances are immutable. ``cdf`` is right-continuous, ``sf(y) = 1 - cdf(y)``
  is evaluated without cancellation so that upper-tail bucket masses keep
  their relative accuracy.
  """

  @property
  @abc.abstractmethod
  def support_bounds(self) -> Tuple[float, float]:
    """Analytic (min, max) of Y; infinite where unbounded."""

  @property
  @abc.abstractmethod
  def mean(self) -> float:
    """E[Y], the KL divergence of the dominating pair."""

  @abc.abstractmethod
  def cdf(self, y):
    """Pr[Y <= y], vectorized."""

  @abc.abstractmethod
  def sf(self, y):
    """Pr[Y > y], vectorized."""

  @abc.abstractmethod
  def delta(self, eps):
    """delta_Y(eps) = E[(1 - exp(eps - Y))_+], vectorized."""

  @abc.abstractmethod
  def log_mgf(self, lam: float) -> float:
    """log E[exp(lam * Y)] for lam >= 0, or an upper bound on it."""

  @abc.abstractmethod
  def truncated_mean(self, L: float) -> float:
    """E[Y | -L < Y <= L]."""

  def dual(self) -> "PrvView":
    """PRV of the swapped pair; its upper tail controls the lower tail of Y."""
    return self

  def mass_within(self, L: float) -> float:
    """Pr[-L < Y <= L]."""
    lo = float(self.cdf(-L))
    hi_tail = float(self.sf(L))
    return max(0.0, 1.0 - lo - hi_tail)

  def delta_fn(self, eps):
    return self.delta(eps)


def _as_float_or_array(x):
  return float(x) if np.ndim(x) == 0 else x


class GaussianPrv(PrvView):
  """Y ~ N(1/(2 sigma^2), 1/sigma^2)."""

  def __init__(self, sigma: float):
    self.sigma = sigma
    self._mu = 1.0 / (2.0 * sigma * sigma)
    self._s = 1.0 / sigma

  @property
  def support_bounds(self):
    return (-math.inf, math.inf)

  @property
  def mean(self):
    return self._mu

  def cdf(self, y):
    return _as_float_or_array(special.ndtr((np.asarray(y, float) - self._mu) / self._s))

  def sf(self, y):
    return _as_float_or_array(special.ndtr((self._mu - np.asarray(y, float)) / self._s))

  def delta(self, eps):
    eps = np.asarray(eps, float)
    a = 1.0 / (2.0 * self.sigma) - eps * self.sigma
    b = -1.0 / (2.0 * self.sigma) - eps * self.sigma
    log_pa = special.log_ndtr(a)
    log_pb = special.log_ndtr(b)
    # Phi(a) - e^eps Phi(b), factored to keep relative accuracy in the tail.
    with np.errstate(over="ignore"):
      ratio = np.minimum(eps + log_pb - log_pa, 0.0)
    out = np.exp(log_pa) * -np.expm1(ratio)
    return _as_float_or_array(np.clip(out, 0.0, 1.0))

  def log_mgf(self, lam):
    return lam * self._mu + 0.5 * lam * lam * self._s * self._s

  def truncated_mean(self, L):
    a = (-L - self._mu) / self._s
    b = (L - self._mu) / self._s
    if b <= 0:
      mass = special.ndtr(b) - special.ndtr(a)
    else:
      mass = special.ndtr(-a) - special.ndtr(-b)
    if mass <= 0:
      raise ValueError(f"no probability mass within (-{L}, {L}]")
    phi = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return self._mu + self._s * (phi(a) - phi(b)) / mass


class LaplacePrv(PrvView):
  """Loss of Laplace(0, b) vs Laplace(1, b).

  Y has atoms at -1/b (mass exp(-1/b)/2) and +1/b (mass 1/2) and density
  exp(y/2 - 1/(2b))/4 in between.
  """

  def __init__(self, scale: float):
    self.scale = scale
    self._e0 = 1.0 / scale

  @property
  def support_bounds(self):
    return (-self._e0, self._e0)

  @property
  def mean(self):
    return self._e0 + math.expm1(-self._e0)

  def cdf(self, y):
    y = np.asarray(y, float)
    e0 = self._e0
    mid = 0.5 * np.exp(0.5 * (np.clip(y, -e0, e0) - e0))
    out = np.where(y < -e0, 0.0, np.where(y >= e0, 1.0, mid))
    return _as_float_or_array(out)

  def sf(self, y):
    y = np.asarray(y, float)
    e0 = self._e0
    mid = -np.expm1(_LOG_HALF + 0.5 * (np.clip(y, -e0, e0) - e0))
    out = np.where(y < -e0, 1.0, np.where(y >= e0, 0.0, mid))
    return _as_float_or_array(out)

  def delta(self, eps):
    eps = np.asarray(eps, float)
    e0 = self._e0
    # Upper atom, continuous part on (max(eps, -e0), e0), and the lower atom
    # whenever eps < -e0.
    a = np.maximum(eps, -e0)
    upper_atom = 0.5 * -np.expm1(np.minimum(eps - e0, 0.0))
    cont = 0.5 * (-np.expm1(0.5 * (a - e0)) + np.exp(eps - 0.5 * e0) * (np.exp(-0.5 * e0) - np.exp(-0.5 * a)))
    lower_atom = np.where(eps < -e0, 0.5 * math.exp(-e0) * -np.expm1(np.minimum(eps + e0, 0.0)), 0.0)
    out = np.where(eps >= e0, 0.0, upper_atom + cont + lower_atom)
    return _as_float_or_array(np.clip(out, 0.0, 1.0))

  def log_mgf(self, lam):
    e0 = self._e0
    c = lam + 0.5
    terms = [
        _LOG_HALF + lam * e0,
        _LOG_HALF - (1.0 + lam) * e0,
        math.log(0.25) + lam * e0 + math.log(-math.expm1(-2.0 * c * e0)) - math.log(c),
    ]
    top = max(terms)
    return top + math.log(math.fsum(math.exp(t - top) for t in terms))

  def truncated_mean(self, L):
    e0 = self._e0
    if L >= e0:
      return self.mean
    lo, hi = -L, L
    # Closed-form integrals of y f(y) and f(y) over (lo, hi] of the density part.
    prim_mass = lambda y: 0.5 * math.exp(0.5 * (y - e0))
    prim_first = lambda y: 0.5 * math.exp(0.5 * (y - e0)) * (y - 2.0)
    mass = prim_mass(hi) - prim_mass(lo)
    first = prim_first(hi) - prim_first(lo)
    if mass <= 0:
      raise ValueError(f"no probability mass within (-{L}, {L}]")
    return first / mass


class SubsampledGaussianPrv(PrvView):
  """Poisson-subsampled Gaussian with sampling probability gamma.

  In the remove direction Y = l(W) with W ~ (1-gamma) N(0, s^2) + gamma N(1, s^2)
  and l(w) = log(1 - gamma + gamma exp((2w - 1)/(2 s^2))); the add direction
  has Y = -l(W) with W ~ N(0, s^2). l is strictly increasing with inverse
  w(y) = 1/2 + s^2 log((e^y - (1 - gamma))/gamma).
  """

  def __init__(self, sigma: float, sampling_prob: float, direction: Direction):
    self.sigma = sigma
    self.gamma = sampling_prob
    self.direction = direction
    self._floor = math.log1p(-sampling_prob) if sampling_prob < 1 else -math.inf

  # -- loss function in w-space -------------------------------------------

  def _a(self, w):
    return (2.0 * w - 1.0) / (2.0 * self.sigma ** 2)

  def _loss(self, w):
    a = self._a(np.asarray(w, float))
    g = self.gamma
    if g == 1:
      return a
    with np.errstate(over="ignore", divide="ignore"):
      small = np.log1p(g * np.expm1(np.minimum(a, 0.0)))
      large = a + np.log(g + (1.0 - g) * np.exp(-np.maximum(a, 0.0)))
    return np.where(a <= 0, small, large)

  def _inverse(self, y):
    """w(y) for y > floor; -inf at or below the floor."""
    y = np.asarray(y, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
      w = 0.5 + self.sigma ** 2 * np.log1p(np.expm1(y) / self.gamma)
    return np.where(y > self._floor, w, -np.inf)

  def _norm_cdf(self, w, shift=0.0):
    return special.ndtr((w - shift) / self.sigma)

  def _norm_sf(self, w, shift=0.0):
    return special.ndtr((shift - w) / self.sigma)

  # -- PrvView ----------------------------------------------------------------

  def dual(self):
    other = Direction.ADD if self.direction is Direction.REMOVE else Direction.REMOVE
    return SubsampledGaussianPrv(self.sigma, self.gamma, other)

  @property
  def support_bounds(self):
    if self.direction is Direction.REMOVE:
      return (self._floor, math.inf)
    return (-math.inf, -self._floor)

  def cdf(self, y):
    g = self.gamma
    if self.direction is Direction.REMOVE:
      w = self._inverse(y)
      out = (1.0 - g) * self._norm_cdf(w) + g * self._norm_cdf(w, 1.0)
    else:
      w = self._inverse(-np.asarray(y, float))
      out = self._norm_sf(w)
    return _as_float_or_array(out)

  def sf(self, y):
    g = self.gamma
    if self.direction is Direction.REMOVE:
      w = self._inverse(y)
      out = (1.0 - g) * self._norm_sf(w) + g * self._norm_sf(w, 1.0)
    else:
      w = self._inverse(-np.asarray(y, float))
      out = self._norm_cdf(w)
    return _as_float_or_array(out)

  def delta(self, eps):
    # Hockey-stick integral in w-space: the set {Y > eps} is a half-line.
    eps = np.asarray(eps, float)
    g = self.gamma
    if self.direction is Direction.REMOVE:
      w = self._inverse(eps)
      q_tail = (1.0 - g) * self._norm_sf(w) + g * self._norm_sf(w, 1.0)
      with np.errstate(divide="ignore"):
        p_tail_log = special.log_ndtr(-w / self.sigma)
      out = q_tail - np.exp(eps + p_tail_log)
    else:
      w = self._inverse(-eps)
      with np.errstate(divide="ignore"):
        q_tail = self._norm_cdf(w)
        mix_tail = (1.0 - g) * self._norm_cdf(w) + g * self._norm_cdf(w, 1.0)
      out = q_tail - np.exp(eps) * mix_tail
      out = np.where(np.isneginf(w), 0.0, out)
    return _as_float_or_array(np.clip(out, 0.0, 1.0))

  def log_mgf(self, lam):
    # Exact at integer orders (binomial expansion of E_P[r^(lam+1)]); convex
    # interpolation between them is an upper bound since log-MGFs are convex.
    # The add direction is dominated by the remove direction at integer
    # orders (Renyi divergence ordering for the sampled Gaussian).
    if lam < 0:
      raise ValueError("log_mgf requires lam >= 0")
    lo = math.floor(lam)
    frac = lam - lo
    v_lo = _sg_log_moment(self.sigma, self.gamma, lo + 1)
    if frac == 0:
      return v_lo
    v_hi = _sg_log_moment(self.sigma, self.gamma, lo + 2)
    return (1.0 - frac) * v_lo + frac * v_hi

  @functools.cached_property
  def mean(self):
    return self._integral(-math.inf, math.inf)

  def truncated_mean(self, L):
    mass = self.mass_within(L)
    if mass <= 0:
      raise ValueError(f"no probability mass within (-{L}, {L}]")
    # Both directions integrate over {w : -L <= l(w) <= L}.
    lo, hi = self._inverse(-L), self._inverse(L)
    return self._integral(float(lo), float(hi)) / mass

  def _integral(self, w_lo, w_hi):
    """E[Y; l(W) in [l(w_lo), l(w_hi)]] in w-space.

    With r = q/p the integrand is rewritten so that no cancellation happens:
    remove uses r log r = (r log r - r + 1) + (r - 1), add uses
    -log r = (r - 1 - log r) - (r - 1); both bracketed terms are >= 0 and the
    (r - 1) part integrates in closed form to Q(A) - P(A).
    """
    s, g = self.sigma, self.gamma
    remove = self.direction is Direction.REMOVE

    def integrand(z):
      w = s * z
      ell = float(self._loss(w))
      a = float(self._a(w))
      log_p = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
      if a < 30:
        u = g * math.expm1(a)
        if abs(u) < 1e-4:
          val = u * u * (0.5 - u / 6.0 + u * u / 12.0) if remove else u * u * (0.5 - u / 3.0 + u * u / 4.0)
        elif remove:
          val = (1.0 + u) * ell - u
        else:
          val = u - ell
        return math.exp(log_p) * val
      pr = math.exp(log_p + ell)
      p = math.exp(log_p)
      return pr * (ell - 1.0) + p if remove else pr - p - p * ell

    z_lo = max(w_lo / s, -40.0) if w_lo > -math.inf else -40.0
    z_hi = min(w_hi / s, 40.0 + 2.0 / s) if w_hi < math.inf else 40.0 + 2.0 / s
    if z_hi <= z_lo:
      body = 0.0
    else:
      pts = [p for p in (0.5 / s, 1.0 / s) if z_lo < p < z_hi]
      body, _ = integrate.quad(integrand, z_lo, z_hi, points=pts or None,
                               epsabs=1e-15, epsrel=1e-12, limit=500)

    def window(x):
      # Pr[x - 1 < W <= x] for W ~ N(0, s^2).
      if math.isinf(x):
        return 0.0
      if x > 0.5:
        return float(special.ndtr((1.0 - x) / s) - special.ndtr(-x / s))
      return float(special.ndtr(x / s) - special.ndtr((x - 1.0) / s))

    q_minus_p = g * (window(w_lo) - window(w_hi))
    return body + q_minus_p if remove else body - q_minus_p


@functools.lru_cache(maxsize=4096)
def _sg_log_moment(sigma: float, gamma: float, alpha: int) -> float:
  """log E_{N(0,s^2)}[(1 - gamma + gamma exp((2w-1)/(2s^2)))^alpha]."""
  if alpha == 0:
    return 0.0
  j = np.arange(alpha + 1, dtype=float)
  log_binom = special.gammaln(alpha + 1) - special.gammaln(j + 1) - special.gammaln(alpha - j + 1)
  with np.errstate(divide="ignore"):
    log_terms = (log_binom + (alpha - j) * math.log1p(-gamma) if gamma < 1 else
                 np.where(j == alpha, 0.0, -np.inf))
  if gamma < 1:
    log_terms = log_terms + j * math.log(gamma)
  log_terms = log_terms + (j * j - j) / (2.0 * sigma * sigma)
  return float(special.logsumexp(log_terms))


def build_prv(spec: MechanismSpec) -> PrvView:
  """Construct the analytic privacy loss random variable of ``spec``."""
  if spec.mechanism is Mechanism.LAPLACE:
    return LaplacePrv(spec.scale)
  if spec.mechanism is Mechanism.GAUSSIAN:
    return GaussianPrv(spec.sigma)
  return SubsampledGaussianPrv(spec.sigma, spec.sampling_prob, spec.direction)


def delta_exact(view: PrvView, eps: float) -> float:
  """delta_Y(eps) of a single (uncomposed) mechanism."""
  if eps < 0:
    raise ValueError(f"eps must be non-negative, got {eps}")
  return float(view.delta(eps))


class ChernoffError(ArithmeticError):
  """Raised when no finite moment bound is available."""


def _chernoff_objective(log_mgf, k, log_inv_delta):
  def f(log_lam):
    lam = math.exp(log_lam)
    try:
      val = log_mgf(lam)
    except (OverflowError, FloatingPointError):
      return math.inf
    if not math.isfinite(val):
      return math.inf
    return (k * val + log_inv_delta) / lam
  return f


def chernoff_eps(log_mgf, k: float, delta: float) -> float:
  """min over lam > 0 of (k log_mgf(lam) + log(1/delta)) / lam.

  A geometric grid over lam locates the basin; golden-section search in
  log(lam) refines it.
  """
  if not 0 < delta < 1:
    raise ValueError(f"delta must lie in (0, 1), got {delta}")
  f = _chernoff_objective(log_mgf, k, math.log(1.0 / delta))
  # The objective is unimodal in lam for convex log-MGFs, so the ascending
  # scan stops once it has clearly passed the minimum.
  grid = np.linspace(math.log(1e-4), math.log(1e7), 111)
  vals = np.full(len(grid), np.inf)
  rising = 0
  for j, x in enumerate(grid):
    vals[j] = f(x)
    if j and np.isfinite(vals[j - 1]) and vals[j] > vals[:j].min():
      rising += 1
      if rising >= 3:
        break
    else:
      rising = 0
  if not np.isfinite(vals).any():
    raise ChernoffError("moment generating function diverges for every probed lambda")
  i = int(np.argmin(vals))
  if 0 < i < len(grid) - 1:
    res = optimize.minimize_scalar(f, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                   method="golden", options={"xtol": 1e-6})
    best = min(vals[i], res.fun)
  else:
    best = vals[i]
  return float(best)


def _one_sided(view: PrvView, k: int, delta: float) -> float:
  # A bounded PRV composes to at most k * sup Y, where delta is already 0.
  return min(chernoff_eps(view.log_mgf, k, delta), k * view.support_bounds[1])


def eps_upper_bound(view: PrvView, k: int, delta: float) -> float:
  """Two-sided tail radius for Y^{(+)k} via the Chernoff/MGF bound.

  Bounds eps_{Y^{(+)k}}(delta) and, through the dual pair, the lower tail:
  E[exp(-(1 + mu) Y)] = E[exp(mu Y')], so Pr[Y^k <= -t] is at most e^{-t}
  times the Chernoff tail of Y'^k at t.
  """
  if k < 1:
    raise ValueError(f"k must be a positive integer, got {k}")
  dual = view.dual()
  upper = _one_sided(view, k, delta)
  return upper if dual is view else max(upper, _one_sided(dual, k, delta))


def _one_sided_sum(views, delta: float) -> float:
  bound = chernoff_eps(lambda lam: sum(v.log_mgf(lam) for v in views), 1, delta)
  return min(bound, math.fsum(v.support_bounds[1] for v in views))


def eps_upper_bound_sum(views, delta: float) -> float:
  """Two-sided Chernoff radius for a heterogeneous sum Y^1 + ... + Y^n."""
  views = list(views)
  duals = [v.dual() for v in views]
  upper = _one_sided_sum(views, delta)
  if all(d is v for d, v in zip(duals, views)):
    return upper
  return max(upper, _one_sided_sum(duals, delta))
