"""Mesh, truncation and failure-budget selection for every composition driver.

Truncation radii need upper bounds on eps_{Y^{(+)j}}(delta) for several j;
these come from the Chernoff bound in :mod:`prv_accountant.mechanisms`. Every
radius is rounded *up* onto its grid, ``L in h * (1/2 + Z>0)``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Mapping, Optional, Sequence, Tuple

from prv_accountant.mechanisms import (ChernoffError, MechanismSpec, PrvView, build_prv,
                                       eps_upper_bound, eps_upper_bound_sum)

MAX_BUCKETS = 2 ** 31


class ParameterError(ValueError):
  pass


@dataclasses.dataclass(frozen=True)
class ErrorBudget:
  eps_err: float
  delta_err: float

  def __post_init__(self):
    if not self.eps_err > 0 or not math.isfinite(self.eps_err):
      raise ValueError(f"eps_err must be positive, got {self.eps_err}")
    if not 0 < self.delta_err < 1:
      raise ValueError(f"delta_err must lie in (0, 1), got {self.delta_err}")


@dataclasses.dataclass(frozen=True)
class SingleStageParams:
  k: int
  h: float
  L: float
  eta: float

  @property
  def bucket_counts(self) -> Tuple[int, ...]:
    return (bucket_count(self.h, self.L),)


@dataclasses.dataclass(frozen=True)
class TwoStageParams:
  k1: int
  k2: int
  r: int
  h1: float
  h2: float
  L1: float
  L2: float
  eta: float
  alpha0: float
  alpha1: float
  alpha2: float

  @property
  def k(self) -> int:
    return self.k1 * self.k2 + self.r

  @property
  def bucket_counts(self) -> Tuple[int, ...]:
    return (bucket_count(self.h1, self.L1), bucket_count(self.h2, self.L2))


@dataclasses.dataclass(frozen=True)
class RecursiveParams:
  t: int
  h: Tuple[float, ...]
  L: Tuple[float, ...]
  eta: float
  loose_constants: bool = False

  @property
  def k(self) -> int:
    return 2 ** self.t

  @property
  def bucket_counts(self) -> Tuple[int, ...]:
    return tuple(bucket_count(h, L) for h, L in zip(self.h, self.L))


def bucket_count(h: float, L: float) -> int:
  """m = 2 (L/h - 1/2) + 1."""
  return 2 * int(round(L / h - 0.5)) + 1


def round_up_L(L: float, h: float) -> float:
  """Smallest value of h * (n + 1/2), n >= 1, that is >= L."""
  n = max(1, math.ceil(L / h - 0.5 - 1e-12))
  if (n + 0.5) * h < L:
    n += 1
  if 2 * n + 1 > MAX_BUCKETS:
    raise ParameterError(f"grid with h={h:.3g}, L={L:.3g} needs {2 * n + 1} buckets (> 2^31)")
  return (n + 0.5) * h


def tail_bound(delta_at_eps: float, eps: float, alpha: float, simplified: bool = False) -> float:
  """Upper bound on Pr[|Y| >= eps + alpha] given delta_Y(eps)."""
  if not alpha > 0:
    raise ValueError("alpha must be positive")
  if simplified:
    if alpha >= 1:
      raise ValueError("the 4 delta / alpha form needs alpha < 1")
    return 4.0 * delta_at_eps / alpha
  return delta_at_eps * (1.0 + math.exp(-eps - alpha)) / -math.expm1(-alpha)


def tail_radius(delta_fn: Callable[[float], float], target_tail: float, alpha: float,
                eps_max: float = 1e4, tol: float = 1e-9) -> float:
  """Smallest eps + alpha (up to ``tol``) whose tail bound is <= target_tail.

  The bound ``delta(eps) (1 + e^{-eps-alpha}) / (1 - e^{-alpha})`` is
  nonincreasing in eps, so a doubling search followed by bisection finds it.
  """
  if not 0 < target_tail < 1:
    raise ValueError(f"target_tail must lie in (0, 1), got {target_tail}")
  bound = lambda e: tail_bound(float(delta_fn(e)), e, alpha)
  if bound(0.0) <= target_tail:
    return alpha
  # Seed the bracket with the simplified form when it applies.
  hi = 1.0
  if alpha < 1:
    while hi < eps_max and 4.0 * float(delta_fn(hi)) / alpha > target_tail:
      hi *= 2.0
  while bound(hi) > target_tail:
    hi *= 2.0
    if hi > eps_max:
      raise ParameterError(
          f"tail target {target_tail:g} not reached for eps in [0, {eps_max:g}]")
  lo = hi / 2.0 if hi > 1.0 else 0.0
  while hi - lo > tol * max(1.0, hi):
    mid = 0.5 * (lo + hi)
    if bound(mid) <= target_tail:
      hi = mid
    else:
      lo = mid
  return hi + alpha


def _eps_bound(view: PrvView, k: int, delta: float) -> float:
  try:
    return eps_upper_bound(view, k, delta)
  except ChernoffError as err:
    raise ParameterError(
        f"{err}; pass explicit h/L overrides computed from another accountant") from err


def _resolve_view(spec) -> PrvView:
  return spec if isinstance(spec, PrvView) else build_prv(spec)


def split_compositions(k: int) -> Tuple[int, int, int]:
  """k = k1 * k2 + r with k1 = floor(sqrt k), k2 = floor(k / k1)."""
  if k < 1:
    raise ValueError(f"k must be positive, got {k}")
  k1 = math.isqrt(k)
  k2 = k // k1
  return k1, k2, k - k1 * k2


def select_single_stage(spec, k: int, budget: ErrorBudget,
                        overrides: Optional[Mapping[str, float]] = None) -> SingleStageParams:
  """One discretization of Y followed by a k-fold convolution.

  Failure budget: eta for the Hoeffding step, and delta_err/4 each for the
  input truncation and for wraparound, using alpha = eps_err in the tail lemma.
  """
  if k < 1:
    raise ValueError(f"k must be positive, got {k}")
  view = _resolve_view(spec)
  eps_err, delta_err = budget.eps_err, budget.delta_err
  eta = delta_err / 4.0
  overrides = dict(overrides or {})
  h = overrides.pop("h", None) or eps_err / math.sqrt(2.0 * k * math.log(1.0 / eta))
  L = overrides.pop("L", None)
  if overrides:
    raise ParameterError(f"unknown overrides {sorted(overrides)}")
  if L is None:
    L = max(_eps_bound(view, 1, eps_err * delta_err / (16.0 * k)) + eps_err,
            _eps_bound(view, k, eps_err * delta_err / 16.0) + 2.0 * eps_err)
  return SingleStageParams(k=k, h=h, L=round_up_L(L, h), eta=eta)


def _two_stage_meshes(k1: int, k2: int, budget: ErrorBudget):
  eps_err = budget.eps_err
  eta = budget.delta_err / (8.0 * k2 + 16.0)
  log_term = math.log(1.0 / eta)
  h1 = eps_err / math.sqrt(2.0 * k1 * k2 * log_term)
  h2 = eps_err / math.sqrt(2.0 * k2 * log_term)
  alphas = (eps_err / math.sqrt(k2), eps_err / (2.0 * math.sqrt(k2)), eps_err)
  return eta, h1, h2, alphas


def _apply_overrides(overrides, h1, h2, L1, L2):
  overrides = dict(overrides or {})
  h1 = overrides.pop("h1", None) or h1
  h2 = overrides.pop("h2", None) or h2
  L1 = overrides.pop("L1", None) or L1
  L2 = overrides.pop("L2", None) or L2
  if overrides:
    raise ParameterError(f"unknown overrides {sorted(overrides)}")
  return h1, h2, L1, L2


def _finish_two_stage(k1, k2, r, eta, alphas, h1, h2, L1, L2):
  if h1 > h2:
    raise ParameterError(f"need h1 <= h2, got {h1} > {h2}")
  L1 = round_up_L(L1, h1)
  L2 = round_up_L(max(L2, L1), h2)
  return TwoStageParams(k1=k1, k2=k2, r=r, h1=h1, h2=h2, L1=L1, L2=L2, eta=eta,
                        alpha0=alphas[0], alpha1=alphas[1], alpha2=alphas[2])


def select_two_stage(spec, k: int, budget: ErrorBudget,
                     overrides: Optional[Mapping[str, float]] = None) -> TwoStageParams:
  """Two-stage plan with k = k1 k2 + r.

  The square-k formulas are applied with (k1, k2) in place of (sqrt k, sqrt k):
    L1 >= max(eps_Y(a0 d / (16 k1 k2)) + a0,
              eps_{Y^k1}(a1 d / (32 k2)) + eps_err / (2 sqrt k2) + a1)
    L2 >= max(eps_{Y^k}(a2 d / 16) + eps_err + a2, L1)
  with a0 = eps_err/sqrt(k2), a1 = eps_err/(2 sqrt(k2)), a2 = eps_err.
  """
  if k < 2:
    raise ValueError(f"two-stage composition needs k >= 2, got {k}")
  view = _resolve_view(spec)
  k1, k2, r = split_compositions(k)
  eta, h1, h2, (a0, a1, a2) = _two_stage_meshes(k1, k2, budget)
  eps_err, delta_err = budget.eps_err, budget.delta_err
  wanted = {key for key in ("L1", "L2") if not (overrides or {}).get(key)}
  L1 = L2 = None
  if "L1" in wanted:
    L1 = max(_eps_bound(view, 1, a0 * delta_err / (16.0 * k1 * k2)) + a0,
             _eps_bound(view, k1, a1 * delta_err / (32.0 * k2)) + eps_err / (2 * math.sqrt(k2)) + a1)
  if "L2" in wanted:
    L2 = _eps_bound(view, k, a2 * delta_err / 16.0) + eps_err + a2
  h1, h2, L1, L2 = _apply_overrides(overrides, h1, h2, L1, L2)
  return _finish_two_stage(k1, k2, r, eta, (a0, a1, a2), h1, h2, L1, L2)


def select_heterogeneous(specs: Sequence, budget: ErrorBudget,
                         overrides: Optional[Mapping[str, float]] = None,
                         k1: Optional[int] = None) -> TwoStageParams:
  """Two-stage plan for composing different mechanisms.

  Group bounds for ``Y^{t k1 + 1 : (t + 1) k1}`` come from one Chernoff
  minimization over the summed log-MGFs of the group. The r remainder inputs
  are discretized on the coarse grid, so their own tails also bound L2.
  """
  views = [_resolve_view(s) for s in specs]
  k = len(views)
  if k < 1:
    raise ValueError("need at least one mechanism")
  if k1 is None:
    k1, k2, r = split_compositions(k)
  else:
    k2 = k // k1 if k1 > 0 else 0
    r = k - k1 * k2
  if k1 < 1 or k2 < 1:
    raise ParameterError(f"invalid factorization k={k}: k1={k1}, k2={k2} leaves an empty group")
  eta, h1, h2, (a0, a1, a2) = _two_stage_meshes(k1, k2, budget)
  eps_err, delta_err = budget.eps_err, budget.delta_err
  wanted = {key for key in ("L1", "L2") if not (overrides or {}).get(key)}
  L1 = L2 = None
  if "L1" in wanted:
    single = max(_eps_bound(v, 1, a0 * delta_err / (16.0 * k1 * k2)) for v in views[:k1 * k2])
    groups = max(_group_bound(views[t * k1:(t + 1) * k1], a1 * delta_err / (32.0 * k2))
                 for t in range(k2))
    L1 = max(single + a0, groups + eps_err / (2 * math.sqrt(k2)) + a1)
  if "L2" in wanted:
    L2 = _group_bound(views, a2 * delta_err / 16.0) + eps_err + a2
    if r:
      L2 = max(L2, max(_eps_bound(v, 1, a2 * delta_err / (16.0 * k)) for v in views[k1 * k2:]) + a2)
  h1, h2, L1, L2 = _apply_overrides(overrides, h1, h2, L1, L2)
  return _finish_two_stage(k1, k2, r, eta, (a0, a1, a2), h1, h2, L1, L2)


def _group_bound(views, delta):
  try:
    return eps_upper_bound_sum(views, delta)
  except ChernoffError as err:
    raise ParameterError(str(err)) from err


def recursive_eta(delta_err: float, t: int, loose_constants: bool = False) -> float:
  base = 2.0 if loose_constants else 8.0
  return delta_err / (2.0 * (t + 2) * base ** (t + 1))


def select_recursive(spec, t: int, budget: ErrorBudget, loose_constants: bool = False,
                     overrides: Optional[Mapping[str, Sequence[float]]] = None) -> RecursiveParams:
  """Schedule for 2^t compositions by repeated doubling.

  With C_i = 8^i, the failure probability of the last stage is at most
  C_{t+1} (eta + sum_i (4/alpha_i) delta_{Y^{2^i}}(L~_i)). Choosing
  eta = delta_err / (2 (t+2) 8^(t+1)) and each tail term <= eta (alpha_i = h_i)
  leaves delta_err/2 for the stages; the initial truncation gets delta_err/4.
  ``loose_constants`` replaces 8 by 2, which the error analysis does not
  justify.
  """
  if t < 1:
    raise ValueError(f"t must be >= 1, got {t}")
  view = _resolve_view(spec)
  eps_err, delta_err = budget.eps_err, budget.delta_err
  eta = recursive_eta(delta_err, t, loose_constants)
  log_term = math.log(2.0 / eta)
  overrides = dict(overrides or {})
  hs = overrides.pop("h", None)
  Ls = overrides.pop("L", None)
  if overrides:
    raise ParameterError(f"unknown overrides {sorted(overrides)}")
  if hs is None:
    hs = [eps_err / (t * math.sqrt(2.0 ** (t - i) * log_term)) for i in range(1, t + 1)]
  hs = [float(h) for h in hs]
  if len(hs) != t or any(b < a for a, b in zip(hs, hs[1:])):
    raise ParameterError("need t nondecreasing mesh sizes")
  slack = math.sqrt(0.5 * log_term)
  out_L = []
  prev = 0.0
  for i, h in enumerate(hs, start=1):
    if Ls is not None:
      raw = float(Ls[i - 1])
    else:
      raw = _eps_bound(view, 2 ** i, eta * h / 4.0) + h * (3.0 + 2.0 * i * slack)
      if i == 1:
        raw = max(raw, _eps_bound(view, 1, delta_err * h / (16.0 * 2 ** t)) + h)
    L = round_up_L(max(raw, prev), h)
    out_L.append(L)
    prev = L
  if Ls is not None and len(Ls) != t:
    raise ParameterError("need t truncation radii")
  return RecursiveParams(t=t, h=tuple(hs), L=tuple(out_L), eta=eta,
                         loose_constants=loose_constants)
