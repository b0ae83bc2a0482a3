"""Composition drivers: single-stage baseline, two-stage, recursive doubling
and heterogeneous two-stage."""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from prv_accountant.convolution import (circular_convolve, convolve_all, self_convolve_power,
                                        worker_count)
from prv_accountant.discretization import DiscretePrv, discretize, rediscretize
from prv_accountant.mechanisms import MechanismSpec, PrvView, build_prv
from prv_accountant.params import (MAX_BUCKETS, ErrorBudget, ParameterError, RecursiveParams,
                                   SingleStageParams, TwoStageParams, select_heterogeneous,
                                   select_recursive, select_single_stage, select_two_stage)

Plan = Union[SingleStageParams, TwoStageParams, RecursiveParams]


@dataclasses.dataclass(frozen=True)
class CompositionResult:
  final: DiscretePrv
  plan: Plan
  stage_bucket_counts: Tuple[int, ...]
  stage_timings: Tuple[float, ...]  # seconds
  budget: ErrorBudget
  metadata: Dict[str, Any]

  @property
  def algorithm(self) -> str:
    return self.metadata["algorithm"]

  @property
  def total_buckets(self) -> int:
    return sum(self.stage_bucket_counts)

  @property
  def runtime(self) -> float:
    return sum(self.stage_timings)


class _Stopwatch:
  def __init__(self):
    self.laps = []
    self._t = time.perf_counter()

  def lap(self):
    now = time.perf_counter()
    self.laps.append(now - self._t)
    self._t = now


def _guard(plan: Plan):
  for m in plan.bucket_counts:
    if m > MAX_BUCKETS:
      raise ParameterError(f"plan needs {m} buckets in one stage (limit 2^31)")


def _discretize_view(view: PrvView, h: float, L: float) -> DiscretePrv:
  # Alg. 1 normalizes, so passing the raw CDF with the conditional mean
  # yields the discretization of Y conditioned on |Y| <= L.
  return discretize(view.cdf, view.truncated_mean(L), h, L, sf=view.sf)


def _meta(algorithm: str, specs, k: int, **extra) -> Dict[str, Any]:
  meta = {"algorithm": algorithm, "k": k,
          "mechanisms": [s.describe() if isinstance(s, MechanismSpec) else repr(s) for s in specs]}
  meta.update(extra)
  return meta


def compose_single_stage(spec: MechanismSpec, k: int, budget: ErrorBudget,
                         overrides: Optional[Mapping[str, float]] = None) -> CompositionResult:
  """Discretize Y once at the fine mesh and convolve k times."""
  view = build_prv(spec)
  plan = select_single_stage(view, k, budget, overrides)
  _guard(plan)
  clock = _Stopwatch()
  y0 = _discretize_view(view, plan.h, plan.L)
  final = self_convolve_power(y0, k)
  clock.lap()
  return CompositionResult(final, plan, plan.bucket_counts, tuple(clock.laps), budget,
                           _meta("single", [spec], k))


def compose_two_stage(spec: MechanismSpec, k: int, budget: ErrorBudget,
                      overrides: Optional[Mapping[str, float]] = None) -> CompositionResult:
  """k = k1 k2 + r compositions with a fine first stage and a coarse second stage."""
  view = build_prv(spec)
  plan = select_two_stage(view, k, budget, overrides)
  _guard(plan)
  clock = _Stopwatch()
  y0 = _discretize_view(view, plan.h1, plan.L1)
  y1 = self_convolve_power(y0, plan.k1)
  clock.lap()
  y2 = self_convolve_power(rediscretize(y1, plan.h2, plan.L2), plan.k2)
  if plan.r:
    yr = rediscretize(self_convolve_power(y0, plan.r), plan.h2, plan.L2)
  else:
    yr = DiscretePrv.point_mass(0.0, plan.h2, plan.L2)
  final = circular_convolve(y2, yr)
  clock.lap()
  return CompositionResult(final, plan, plan.bucket_counts, tuple(clock.laps), budget,
                           _meta("two-stage", [spec], k))


def compose_recursive(spec: MechanismSpec, k: int, budget: ErrorBudget,
                      overrides: Optional[Mapping[str, Sequence[float]]] = None,
                      loose_constants: bool = False) -> CompositionResult:
  """2^t compositions by t rounds of re-discretize and self-convolve."""
  if k < 2 or k & (k - 1):
    raise ValueError(f"recursive composition needs k = 2^t with t >= 1, got {k}")
  t = k.bit_length() - 1
  view = build_prv(spec)
  plan = select_recursive(view, t, budget, loose_constants=loose_constants, overrides=overrides)
  _guard(plan)
  clock = _Stopwatch()
  y = self_convolve_power(_discretize_view(view, plan.h[0], plan.L[0]), 2)
  clock.lap()
  for h, L in zip(plan.h[1:], plan.L[1:]):
    y = self_convolve_power(rediscretize(y, h, L), 2)
    clock.lap()
  return CompositionResult(y, plan, plan.bucket_counts, tuple(clock.laps), budget,
                           _meta("recursive", [spec], k, loose_constants=loose_constants))


def compose_heterogeneous(specs: Sequence[MechanismSpec], budget: ErrorBudget,
                          overrides: Optional[Mapping[str, float]] = None,
                          k1: Optional[int] = None) -> CompositionResult:
  """Two-stage composition of a list of (possibly different) mechanisms.

  Groups of k1 consecutive inputs are convolved on the fine grid, coarsened,
  and combined; the last r inputs are discretized directly on the coarse grid.
  """
  specs = list(specs)
  if not specs:
    raise ValueError("need at least one mechanism")
  views = [build_prv(s) for s in specs]
  plan = select_heterogeneous(views, budget, overrides, k1=k1)
  _guard(plan)
  k1, k2 = plan.k1, plan.k2
  clock = _Stopwatch()

  def group(t):
    fine = [_discretize_view(v, plan.h1, plan.L1) for v in views[t * k1:(t + 1) * k1]]
    return rediscretize(convolve_all(fine).result, plan.h2, plan.L2)

  workers = min(worker_count(), k2)
  if workers > 1:
    with ThreadPoolExecutor(max_workers=workers) as pool:
      coarse = list(pool.map(group, range(k2)))
  else:
    coarse = [group(t) for t in range(k2)]
  clock.lap()
  rest = [_discretize_view(v, plan.h2, plan.L2) for v in views[k1 * k2:]]
  final = convolve_all(coarse + rest).result
  clock.lap()
  return CompositionResult(final, plan, plan.bucket_counts, tuple(clock.laps), budget,
                           _meta("heterogeneous", specs, len(specs)))


ALGORITHMS = {
    "single": compose_single_stage,
    "two-stage": compose_two_stage,
    "recursive": compose_recursive,
}


def compose(spec: MechanismSpec, k: int, budget: ErrorBudget, algorithm: str = "two-stage",
            overrides=None, loose_constants: bool = False) -> CompositionResult:
  """Dispatch to one homogeneous driver by name."""
  if algorithm not in ALGORITHMS:
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
  if algorithm == "recursive":
    return compose_recursive(spec, k, budget, overrides, loose_constants=loose_constants)
  if algorithm == "two-stage" and k == 1:
    return compose_single_stage(spec, k, budget, overrides)
  return ALGORITHMS[algorithm](spec, k, budget, overrides)
