"""Privacy-curve queries with bound sandwiches, serialization, benchmarks and plots."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from prv_accountant.accountants import CompositionResult, compose
from prv_accountant.discretization import DiscretePrv
from prv_accountant.mechanisms import Direction, Mechanism, MechanismSpec
from prv_accountant.params import ErrorBudget

Results = Union[CompositionResult, Sequence[CompositionResult]]

EPS_TOL = 1e-6


class ReportError(ValueError):
  pass


def fmt(x: float) -> str:
  """Fixed 17-significant-digit rendering (round-trips every double)."""
  return "%.17g" % x


@dataclasses.dataclass(frozen=True)
class DeltaSandwich:
  eps: float
  delta_lower: float
  delta_estimate: float
  delta_upper: float
  eps_err: float
  delta_err: float

  def __post_init__(self):
    if not self.delta_lower <= self.delta_estimate <= self.delta_upper:
      raise ValueError(f"unordered sandwich {self}")

  def contains(self, delta: float) -> bool:
    return self.delta_lower <= delta <= self.delta_upper


@dataclasses.dataclass(frozen=True)
class EpsSandwich:
  delta: float
  eps_lower: float
  eps_estimate: float
  eps_upper: float


def delta_from_pmf(p: DiscretePrv, eps: float) -> float:
  """sum over support points y > eps of q(y) (1 - e^{eps - y}); defined for any real eps."""
  y = p.points
  above = y > eps
  if not above.any():
    return 0.0
  val = float(np.dot(p.q[above], -np.expm1(eps - y[above])))
  return min(1.0, max(0.0, val))


def _as_list(results: Results) -> List[CompositionResult]:
  if isinstance(results, CompositionResult):
    return [results]
  results = list(results)
  if not results:
    raise ValueError("no results")
  return results


def _curves(results: Results):
  """(lower, estimate, upper) curves, each the max over the given runs."""
  results = _as_list(results)

  def lower(e):
    return max(max(0.0, delta_from_pmf(r.final, e + r.budget.eps_err) - r.budget.delta_err)
               for r in results)

  def estimate(e):
    return max(delta_from_pmf(r.final, e) for r in results)

  def upper(e):
    return max(min(1.0, delta_from_pmf(r.final, e - r.budget.eps_err) + r.budget.delta_err)
               for r in results)

  return lower, estimate, upper


def sandwich(results: Results, eps: float) -> DeltaSandwich:
  """Bracket delta(eps) of the true composition using the run's error budget.

  With several results (one per adjacency direction) every component is the
  maximum over the runs.
  """
  rs = _as_list(results)
  lo, est, up = _curves(rs)
  return DeltaSandwich(eps=float(eps), delta_lower=lo(eps), delta_estimate=est(eps),
                       delta_upper=up(eps), eps_err=rs[0].budget.eps_err,
                       delta_err=max(r.budget.delta_err for r in rs))


def _invert(curve: Callable[[float], float], target: float, hi: float) -> float:
  """Smallest eps >= 0 (to EPS_TOL, rounded up) with curve(eps) <= target."""
  if curve(0.0) <= target:
    return 0.0
  if curve(hi) > target:
    raise ReportError(f"delta {target:g} not reached for eps <= {hi:g}")
  lo = 0.0
  while hi - lo > EPS_TOL:
    mid = 0.5 * (lo + hi)
    if curve(mid) <= target:
      hi = mid
    else:
      lo = mid
  return hi


def eps_from_delta(results: Results, delta: float) -> EpsSandwich:
  """Invert the three sandwich curves by bisection.

  The eps bounds are ordered the other way from the delta curves: the upper
  delta curve gives the upper eps bound.
  """
  if not 0 < delta <= 1:
    raise ValueError(f"delta target must lie in (0, 1], got {delta}")
  rs = _as_list(results)
  floor = max(r.budget.delta_err for r in rs)
  if delta <= floor and delta < 1:
    raise ReportError(
        f"delta target {delta:g} is at or below the sandwich floor delta_err={floor:g}; "
        f"attainable range is ({floor:g}, 1]")
  lo, est, up = _curves(rs)
  hi = max(r.final.L + r.budget.eps_err for r in rs) + 1.0
  return EpsSandwich(delta=delta, eps_lower=_invert(lo, delta, hi),
                     eps_estimate=_invert(est, delta, hi), eps_upper=_invert(up, delta, hi))


# ---------------------------------------------------------------------------
# Directions


def directions_for(spec: MechanismSpec, direction: str) -> List[MechanismSpec]:
  """Specs to run for ``direction`` in {remove, add, both}.

  Laplace and Gaussian are symmetric, so only one run is ever needed for them.
  """
  if direction not in ("remove", "add", "both"):
    raise ValueError(f"unknown direction {direction!r}")
  if spec.mechanism is not Mechanism.SUBSAMPLED_GAUSSIAN:
    return [spec]
  if direction == "both":
    return [spec.with_direction(Direction.REMOVE), spec.with_direction(Direction.ADD)]
  return [spec.with_direction(Direction(direction))]


def compose_directions(spec: MechanismSpec, k: int, budget: ErrorBudget, algorithm: str,
                       direction: str = "remove", overrides=None,
                       loose_constants: bool = False) -> List[CompositionResult]:
  return [compose(s, k, budget, algorithm, overrides=overrides, loose_constants=loose_constants)
          for s in directions_for(spec, direction)]


# ---------------------------------------------------------------------------
# Compose reports


@dataclasses.dataclass(frozen=True)
class ComposeReport:
  mechanism: str
  params: Dict[str, float]
  k: int
  algorithm: str
  eps_err: float
  delta_err: float
  direction: str
  points: Tuple[DeltaSandwich, ...] = ()
  eps_points: Tuple[EpsSandwich, ...] = ()
  buckets_per_stage: Tuple[int, ...] = ()
  runtime_ms: float = 0.0
  loose_constants: bool = False

  def to_dict(self) -> dict:
    out = {"mechanism": self.mechanism, "params": dict(self.params), "k": self.k,
           "algorithm": self.algorithm, "eps_err": self.eps_err, "delta_err": self.delta_err,
           "direction": self.direction,
           "points": [{"eps": p.eps, "delta_lower": p.delta_lower, "delta_est": p.delta_estimate,
                       "delta_upper": p.delta_upper} for p in self.points],
           "buckets_per_stage": list(self.buckets_per_stage), "runtime_ms": self.runtime_ms}
    if self.eps_points:
      out["eps_points"] = [{"delta": p.delta, "eps_lower": p.eps_lower,
                            "eps_est": p.eps_estimate, "eps_upper": p.eps_upper}
                           for p in self.eps_points]
    if self.loose_constants:
      out["loose_constants"] = True
      out["warning"] = "loose constants: the reported bounds are not backed by the error analysis"
    return out

  @classmethod
  def from_dict(cls, d: dict) -> "ComposeReport":
    pts = tuple(DeltaSandwich(p["eps"], p["delta_lower"], p["delta_est"], p["delta_upper"],
                              d["eps_err"], d["delta_err"]) for p in d.get("points", []))
    eps_pts = tuple(EpsSandwich(p["delta"], p["eps_lower"], p["eps_est"], p["eps_upper"])
                    for p in d.get("eps_points", []))
    return cls(mechanism=d["mechanism"], params=dict(d["params"]), k=int(d["k"]),
               algorithm=d["algorithm"], eps_err=d["eps_err"], delta_err=d["delta_err"],
               direction=d["direction"], points=pts, eps_points=eps_pts,
               buckets_per_stage=tuple(d["buckets_per_stage"]), runtime_ms=d["runtime_ms"],
               loose_constants=bool(d.get("loose_constants", False)))

  def to_json(self) -> str:
    return json.dumps(self.to_dict(), indent=2)

  @classmethod
  def from_json(cls, text: str) -> "ComposeReport":
    return cls.from_dict(json.loads(text))

  CSV_FIELDS = ("mechanism", "params", "k", "algorithm", "direction", "eps_err", "delta_err",
                "eps", "delta_lower", "delta_est", "delta_upper", "delta", "eps_lower",
                "eps_est", "eps_upper", "buckets_per_stage", "runtime_ms")

  def to_csv(self) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(self.CSV_FIELDS)
    head = [self.mechanism, _params_str(self.params), self.k, self.algorithm, self.direction,
            fmt(self.eps_err), fmt(self.delta_err)]
    tail = [";".join(map(str, self.buckets_per_stage)), fmt(self.runtime_ms)]
    for p in self.points:
      w.writerow(head + [fmt(p.eps), fmt(p.delta_lower), fmt(p.delta_estimate),
                         fmt(p.delta_upper), "", "", "", ""] + tail)
    for p in self.eps_points:
      w.writerow(head + ["", "", "", "", fmt(p.delta), fmt(p.eps_lower), fmt(p.eps_estimate),
                         fmt(p.eps_upper)] + tail)
    return buf.getvalue()

  @classmethod
  def from_csv(cls, text: str) -> "ComposeReport":
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
      raise ReportError("empty CSV")
    r0 = rows[0]
    eps_err, delta_err = float(r0["eps_err"]), float(r0["delta_err"])
    pts, eps_pts = [], []
    for r in rows:
      if r["eps"]:
        pts.append(DeltaSandwich(float(r["eps"]), float(r["delta_lower"]), float(r["delta_est"]),
                                 float(r["delta_upper"]), eps_err, delta_err))
      else:
        eps_pts.append(EpsSandwich(float(r["delta"]), float(r["eps_lower"]),
                                   float(r["eps_est"]), float(r["eps_upper"])))
    return cls(mechanism=r0["mechanism"], params=_parse_params(r0["params"]), k=int(r0["k"]),
               algorithm=r0["algorithm"], eps_err=eps_err, delta_err=delta_err,
               direction=r0["direction"], points=tuple(pts), eps_points=tuple(eps_pts),
               buckets_per_stage=_parse_buckets(r0["buckets_per_stage"]),
               runtime_ms=float(r0["runtime_ms"]))


def _params_str(params: Dict) -> str:
  return ";".join(f"{k}={fmt(v) if isinstance(v, float) else v}" for k, v in params.items())


def _parse_params(s: str) -> Dict:
  out = {}
  for item in filter(None, s.split(";")):
    key, val = item.split("=", 1)
    try:
      out[key] = float(val)
    except ValueError:
      out[key] = val
  return out


def _parse_buckets(s: str) -> Tuple[int, ...]:
  return tuple(int(x) for x in s.split(";") if x)


def build_report(spec: MechanismSpec, results: Sequence[CompositionResult], direction: str,
                 eps: Iterable[float] = (), deltas: Iterable[float] = ()) -> ComposeReport:
  results = list(results)
  first = results[0]
  params = {k: v for k, v in spec.params().items() if k != "direction"}
  return ComposeReport(
      mechanism=spec.mechanism.value, params=params, k=first.metadata["k"],
      algorithm=first.algorithm, eps_err=first.budget.eps_err, delta_err=first.budget.delta_err,
      direction=direction if spec.mechanism is Mechanism.SUBSAMPLED_GAUSSIAN else "remove",
      points=tuple(sandwich(results, e) for e in eps),
      eps_points=tuple(eps_from_delta(results, d) for d in deltas),
      buckets_per_stage=tuple(first.stage_bucket_counts),
      runtime_ms=1e3 * sum(r.runtime for r in results),
      loose_constants=bool(first.metadata.get("loose_constants", False)))


# ---------------------------------------------------------------------------
# Benchmarks

REFERENCE_K = 2 ** 16
REFERENCE_SIGMA = 226.86
REFERENCE_SAMPLING_PROB = 0.2
REFERENCE_LAPLACE_SCALE = 1133.84


def scaled_noise_spec(spec: MechanismSpec, k: int, reference_k: int = REFERENCE_K) -> MechanismSpec:
  """Rescale the noise by sqrt(k / reference_k).

  In the large-noise regime the composed curve is close to a Gaussian one
  whose parameter depends on k / sigma^2, so this keeps delta(1) roughly
  fixed across k, which is how the benchmark configurations were chosen.
  """
  f = math.sqrt(k / reference_k)
  if spec.mechanism is Mechanism.LAPLACE:
    return dataclasses.replace(spec, scale=spec.scale * f)
  return dataclasses.replace(spec, sigma=spec.sigma * f)


def reference_configuration(mechanism: str, k: int) -> MechanismSpec:
  """Benchmark mechanism at k compositions with delta(1) near 1e-6."""
  if mechanism == "laplace":
    base = MechanismSpec.laplace(REFERENCE_LAPLACE_SCALE)
  elif mechanism == "subsampled-gaussian":
    base = MechanismSpec.subsampled_gaussian(REFERENCE_SIGMA, REFERENCE_SAMPLING_PROB)
  else:
    raise ValueError(f"no benchmark configuration for {mechanism!r}")
  return scaled_noise_spec(base, k)


@dataclasses.dataclass(frozen=True)
class BenchmarkRecord:
  algorithm: str
  k: int
  mechanism: str
  buckets_per_stage: Tuple[int, ...]
  stage_seconds: Tuple[float, ...]
  total_seconds: float
  repeats: int
  points: Tuple[DeltaSandwich, ...]

  @property
  def total_buckets(self) -> int:
    return sum(self.buckets_per_stage)

  FIELDS = ("algorithm", "k", "mechanism", "total_buckets", "buckets_per_stage",
            "stage_seconds", "total_seconds", "repeats", "eps_err", "delta_err", "eps",
            "delta_lower", "delta_est", "delta_upper")

  def rows(self) -> List[List[str]]:
    head = [self.algorithm, str(self.k), self.mechanism, str(self.total_buckets),
            ";".join(map(str, self.buckets_per_stage)),
            ";".join(fmt(s) for s in self.stage_seconds), fmt(self.total_seconds),
            str(self.repeats)]
    return [head + [fmt(p.eps_err), fmt(p.delta_err), fmt(p.eps), fmt(p.delta_lower),
                    fmt(p.delta_estimate), fmt(p.delta_upper)] for p in self.points]

  def to_dict(self) -> dict:
    return {"algorithm": self.algorithm, "k": self.k, "mechanism": self.mechanism,
            "buckets_per_stage": list(self.buckets_per_stage),
            "stage_seconds": list(self.stage_seconds), "total_seconds": self.total_seconds,
            "repeats": self.repeats,
            "points": [dataclasses.asdict(p) for p in self.points]}

  @classmethod
  def from_dict(cls, d: dict) -> "BenchmarkRecord":
    return cls(algorithm=d["algorithm"], k=int(d["k"]), mechanism=d["mechanism"],
               buckets_per_stage=tuple(d["buckets_per_stage"]),
               stage_seconds=tuple(d["stage_seconds"]), total_seconds=d["total_seconds"],
               repeats=int(d["repeats"]), points=tuple(DeltaSandwich(**p) for p in d["points"]))


def records_to_csv(records: Sequence[BenchmarkRecord]) -> str:
  buf = io.StringIO()
  w = csv.writer(buf, lineterminator="\n")
  w.writerow(BenchmarkRecord.FIELDS)
  for rec in records:
    w.writerows(rec.rows())
  return buf.getvalue()


def records_from_csv(text: str) -> List[BenchmarkRecord]:
  out: List[BenchmarkRecord] = []
  groups: Dict[tuple, list] = {}
  for r in csv.DictReader(io.StringIO(text)):
    key = (r["algorithm"], r["k"], r["mechanism"], r["buckets_per_stage"], r["stage_seconds"],
           r["total_seconds"], r["repeats"])
    if key not in groups:
      groups[key] = []
      out.append(key)
    groups[key].append(r)
  records = []
  for key in out:
    rows = groups[key]
    pts = tuple(DeltaSandwich(float(r["eps"]), float(r["delta_lower"]), float(r["delta_est"]),
                              float(r["delta_upper"]), float(r["eps_err"]), float(r["delta_err"]))
                for r in rows)
    records.append(BenchmarkRecord(
        algorithm=key[0], k=int(key[1]), mechanism=key[2], buckets_per_stage=_parse_buckets(key[3]),
        stage_seconds=tuple(float(x) for x in key[4].split(";") if x),
        total_seconds=float(key[5]), repeats=int(key[6]), points=pts))
  return records


def records_to_json(records: Sequence[BenchmarkRecord]) -> str:
  return json.dumps([r.to_dict() for r in records], indent=2)


def records_from_json(text: str) -> List[BenchmarkRecord]:
  return [BenchmarkRecord.from_dict(d) for d in json.loads(text)]


def run_benchmark(spec_for_k: Callable[[int], MechanismSpec], k_list: Sequence[int],
                  budget: ErrorBudget, algorithms: Sequence[str] = ("single", "two-stage"),
                  repeats: int = 1, eps: Sequence[float] = (1.0,), direction: str = "remove",
                  loose_constants: bool = False,
                  progress: Optional[Callable[[str], None]] = None) -> List[BenchmarkRecord]:
  """Run each (k, algorithm) ``repeats`` times, sequentially, and average the timings."""
  if repeats < 1:
    raise ValueError("repeats must be >= 1")
  records = []
  for k in k_list:
    spec = spec_for_k(k)
    for algorithm in algorithms:
      stage_sums = None
      total = 0.0
      for _ in range(repeats):
        t0 = time.perf_counter()
        results = compose_directions(spec, k, budget, algorithm, direction,
                                     loose_constants=loose_constants)
        total += time.perf_counter() - t0
        laps = np.sum([r.stage_timings for r in results], axis=0)
        stage_sums = laps if stage_sums is None else stage_sums + laps
      rec = BenchmarkRecord(
          algorithm=results[0].algorithm, k=k, mechanism=spec.describe(),
          buckets_per_stage=tuple(results[0].stage_bucket_counts),
          stage_seconds=tuple(float(s) / repeats for s in stage_sums),
          total_seconds=total / repeats, repeats=repeats,
          points=tuple(sandwich(results, e) for e in eps))
      records.append(rec)
      if progress:
        progress(f"k={k} {algorithm}: {rec.total_buckets} buckets, {rec.total_seconds:.3f}s")
  return records


# ---------------------------------------------------------------------------
# Plots


def _pyplot():
  import matplotlib
  matplotlib.use("Agg")
  import matplotlib.pyplot as plt
  return plt


def plot_benchmark(records: Sequence[BenchmarkRecord], path: str) -> None:
  """Runtime, bucket count and delta estimate against k, one line per algorithm."""
  plt = _pyplot()
  fig, axes = plt.subplots(1, 3, figsize=(13, 4))
  for algorithm in dict.fromkeys(r.algorithm for r in records):
    recs = sorted((r for r in records if r.algorithm == algorithm), key=lambda r: r.k)
    ks = [r.k for r in recs]
    axes[0].plot(ks, [r.total_seconds for r in recs], marker="o", label=algorithm)
    axes[1].plot(ks, [r.total_buckets for r in recs], marker="o", label=algorithm)
    if recs and recs[0].points:
      axes[2].plot(ks, [r.points[0].delta_estimate for r in recs], marker="o",
                   label=f"{algorithm} estimate")
      axes[2].plot(ks, [r.points[0].delta_upper for r in recs], linestyle="--",
                   label=f"{algorithm} upper")
      axes[2].plot(ks, [r.points[0].delta_lower for r in recs], linestyle=":",
                   label=f"{algorithm} lower")
  for ax, title in zip(axes, ("runtime (s)", "buckets", "delta")):
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("k")
    ax.set_title(title)
    ax.legend(fontsize="small")
  fig.tight_layout()
  fig.savefig(path, format="svg")
  plt.close(fig)


def plot_sandwiches(points: Sequence[DeltaSandwich], path: str) -> None:
  plt = _pyplot()
  fig, ax = plt.subplots(figsize=(6, 4))
  eps = [p.eps for p in points]
  ax.plot(eps, [p.delta_estimate for p in points], marker="o", label="estimate")
  ax.plot(eps, [p.delta_upper for p in points], linestyle="--", label="upper")
  ax.plot(eps, [max(p.delta_lower, 1e-300) for p in points], linestyle=":", label="lower")
  ax.set_yscale("log")
  ax.set_xlabel("eps")
  ax.set_ylabel("delta")
  ax.legend()
  fig.tight_layout()
  fig.savefig(path, format="svg")
  plt.close(fig)
