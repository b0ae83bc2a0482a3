"""Command line interface: ``compose``, ``sweep`` and ``benchmark``."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional, Sequence

import numpy as np

from prv_accountant import report
from prv_accountant.convolution import ConvolutionError
from prv_accountant.discretization import DiscretizationError
from prv_accountant.mechanisms import ChernoffError, MechanismSpec
from prv_accountant.params import ErrorBudget, ParameterError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
  pass


def _floats(text: str) -> List[float]:
  try:
    return [float(x) for x in text.split(",") if x.strip()]
  except ValueError:
    raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
  try:
    return [int(x) for x in text.split(",") if x.strip()]
  except ValueError:
    raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, need_k: bool = True):
  g = p.add_argument_group("mechanism")
  g.add_argument("--mechanism", required=True,
                 choices=["laplace", "gaussian", "subsampled-gaussian"])
  g.add_argument("--scale", type=float, help="Laplace scale b")
  g.add_argument("--sigma", type=float, help="Gaussian noise multiplier")
  g.add_argument("--sampling-prob", type=float, help="Poisson sampling probability")
  g.add_argument("--direction", choices=["remove", "add", "both"], default="remove")
  if need_k:
    p.add_argument("--compositions", type=int, required=True, help="number of compositions k")
  p.add_argument("--algorithm", choices=["single", "two-stage", "recursive"], default="two-stage")
  p.add_argument("--eps-err", type=float, default=0.1)
  p.add_argument("--delta-err", type=float, default=1e-10)
  p.add_argument("--loose-constants", action="store_true",
                 help="recursive only: smaller safety constants (not covered by the error bound)")
  x = p.add_argument_group("expert overrides")
  for name in ("h1", "h2", "L1", "L2"):
    x.add_argument(f"--override-{name}", type=float, dest=f"override_{name}")
  x.add_argument("--override-h", type=_floats, help="single: one value; recursive: t values")
  x.add_argument("--override-L", type=_floats, help="single: one value; recursive: t values")
  p.add_argument("--format", choices=["json", "csv"], default="json")
  p.add_argument("--output", help="write the report here instead of stdout")
  p.add_argument("--plot", help="write an SVG chart here")


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      prog="prv-accountant",
      description="Compose privacy loss random variables and report delta(eps) bounds.")
  sub = parser.add_subparsers(dest="command", required=True)

  c = sub.add_parser("compose", help="bounds at a few eps values or one delta target")
  _add_common(c)
  q = c.add_mutually_exclusive_group(required=True)
  q.add_argument("--eps", type=_floats, help="comma-separated eps values")
  q.add_argument("--delta", type=float, help="delta target; reports eps bounds")

  s = sub.add_parser("sweep", help="bounds on a grid of eps values or delta targets")
  _add_common(s)
  q = s.add_mutually_exclusive_group(required=True)
  q.add_argument("--eps", type=_floats, help="comma-separated eps values")
  q.add_argument("--eps-range", type=_floats, metavar="START,STOP,NUM",
                 help="evenly spaced eps grid")
  q.add_argument("--delta", type=_floats, help="comma-separated delta targets")

  b = sub.add_parser("benchmark", help="bucket counts and runtimes across k")
  _add_common(b, need_k=False)
  b.add_argument("--k-list", type=_ints, required=True)
  b.add_argument("--repeats", type=int, default=1)
  b.add_argument("--algorithms", default="single,two-stage",
                 help="comma-separated subset of single,two-stage,recursive")
  b.add_argument("--eps", type=_floats, default=[1.0])
  b.add_argument("--scale-noise", action="store_true",
                 help="multiply sigma or b by sqrt(k / reference-k) for each k")
  b.add_argument("--reference-k", type=int, default=report.REFERENCE_K)
  b.set_defaults(format="csv")
  return parser


def _spec(args) -> MechanismSpec:
  try:
    if args.mechanism == "laplace":
      if args.scale is None:
        raise UsageError("--scale is required for laplace")
      return MechanismSpec.laplace(args.scale)
    if args.sigma is None:
      raise UsageError(f"--sigma is required for {args.mechanism}")
    if args.mechanism == "gaussian":
      return MechanismSpec.gaussian(args.sigma)
    if args.sampling_prob is None:
      raise UsageError("--sampling-prob is required for subsampled-gaussian")
    return MechanismSpec.subsampled_gaussian(args.sigma, args.sampling_prob)
  except ValueError as err:
    raise UsageError(str(err)) from err


def _budget(args) -> ErrorBudget:
  try:
    return ErrorBudget(args.eps_err, args.delta_err)
  except ValueError as err:
    raise UsageError(str(err)) from err


def _overrides(args):
  algorithm = args.algorithm
  pair = {k: getattr(args, f"override_{k}") for k in ("h1", "h2", "L1", "L2")}
  pair = {k: v for k, v in pair.items() if v is not None}
  lists = {k: v for k, v in (("h", args.override_h), ("L", args.override_L)) if v is not None}
  if algorithm == "two-stage":
    if lists:
      raise UsageError("two-stage takes --override-h1/h2/L1/L2")
    return pair or None
  if pair:
    raise UsageError(f"{algorithm} takes --override-h/--override-L")
  if algorithm == "single":
    out = {}
    for k, v in lists.items():
      if len(v) != 1:
        raise UsageError(f"single-stage takes one --override-{k} value")
      out[k] = v[0]
    return out or None
  return lists or None


def _emit(text: str, path: Optional[str]):
  if path:
    with open(path, "w") as f:
      f.write(text)
  else:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_compose(args, eps: Sequence[float], deltas: Sequence[float]):
  if any(e < 0 for e in eps):
    raise UsageError("eps queries must be non-negative")
  if any(not 0 < d <= 1 for d in deltas):
    raise UsageError("delta targets must lie in (0, 1]")
  if args.compositions < 1:
    raise UsageError("--compositions must be positive")
  k = args.compositions
  if args.algorithm == "recursive" and (k < 2 or k & (k - 1)):
    raise UsageError("recursive composition needs --compositions = 2^t with t >= 1")
  spec, budget = _spec(args), _budget(args)
  results = report.compose_directions(spec, args.compositions, budget, args.algorithm,
                                      args.direction, overrides=_overrides(args),
                                      loose_constants=args.loose_constants)
  rep = report.build_report(spec, results, args.direction, eps=eps, deltas=deltas)
  _emit(rep.to_json() if args.format == "json" else rep.to_csv(), args.output)
  if args.plot:
    if not rep.points:
      raise UsageError("--plot needs eps queries")
    report.plot_sandwiches(rep.points, args.plot)
  if args.loose_constants:
    print("warning: --loose-constants bounds are not covered by the error analysis",
          file=sys.stderr)


def _cmd_benchmark(args):
  spec, budget = _spec(args), _budget(args)
  algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
  bad = set(algorithms) - {"single", "two-stage", "recursive"}
  if bad:
    raise UsageError(f"unknown algorithms {sorted(bad)}")
  if any(k < 1 for k in args.k_list) or args.repeats < 1:
    raise UsageError("k values and --repeats must be positive")
  spec_for_k = ((lambda k: report.scaled_noise_spec(spec, k, args.reference_k))
                if args.scale_noise else (lambda k: spec))
  records = report.run_benchmark(
      spec_for_k, args.k_list, budget, algorithms, args.repeats, args.eps, args.direction,
      loose_constants=args.loose_constants,
      progress=lambda msg: print(msg, file=sys.stderr))
  text = report.records_to_json(records) if args.format == "json" else report.records_to_csv(records)
  _emit(text, args.output)
  if args.plot:
    report.plot_benchmark(records, args.plot)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
  except SystemExit as exit_:
    return int(exit_.code or 0)
  try:
    if args.command == "compose":
      if args.eps is not None:
        _cmd_compose(args, args.eps, [])
      else:
        _cmd_compose(args, [], [args.delta])
    elif args.command == "sweep":
      if args.eps_range is not None:
        if len(args.eps_range) != 3 or args.eps_range[2] < 1:
          raise UsageError("--eps-range takes START,STOP,NUM")
        start, stop, num = args.eps_range
        eps = list(np.linspace(start, stop, int(num)))
      else:
        eps = args.eps or []
      _cmd_compose(args, eps, args.delta or [])
    else:
      _cmd_benchmark(args)
  except UsageError as err:
    parser.print_usage(sys.stderr)
    print(f"error: {err}", file=sys.stderr)
    return EXIT_USAGE
  except (ParameterError, DiscretizationError, ConvolutionError, ChernoffError,
          report.ReportError, ArithmeticError, ValueError) as err:
    print(f"numerical error: {err}", file=sys.stderr)
    return EXIT_NUMERIC
  return EXIT_OK


def main() -> None:
  sys.exit(run_cli())


if __name__ == "__main__":
  main()
