"""Circular (mod 2L) convolution of grid pmfs via real FFTs.

Index arithmetic modulo ``m = 2n + 1`` is exactly value arithmetic modulo
``2L`` because ``m h = 2L``. The transforms run on exactly ``m`` points
(pocketfft is mixed-radix with a Bluestein fallback), never zero-padded.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from prv_accountant.discretization import DiscretePrv

NEGATIVE_CLAMP = 1e-12
MASS_TOL = 1e-8


class ConvolutionError(ArithmeticError):
  pass


def worker_count() -> int:
  """Thread cap from ``PRV_ACCOUNTANT_THREADS`` (default: 1)."""
  raw = os.environ.get("PRV_ACCOUNTANT_THREADS", "").strip()
  if not raw:
    return 1
  try:
    return max(1, int(raw))
  except ValueError:
    raise ValueError(f"PRV_ACCOUNTANT_THREADS must be an integer, got {raw!r}") from None


@dataclasses.dataclass(frozen=True)
class WrappedSum:
  """Result of combining ``folds`` operands modulo 2L.

  ``shift_overflow`` is the integer number of grid steps carried out of the
  summed shift when it was reduced back into (-h/2, h/2].
  """
  result: DiscretePrv
  folds: int
  shift_overflow: int


def reduce_shift(s: float, h: float) -> tuple[int, float]:
  """Split ``s = c h + mu`` with integer c and mu in (-h/2, h/2]."""
  c = math.ceil(s / h - 0.5)
  mu = s - c * h
  if mu <= -h / 2:
    c -= 1
    mu += h
  elif mu > h / 2:
    c += 1
    mu -= h
  return c, mu


def _spectrum(p: DiscretePrv) -> np.ndarray:
  # Rotate so that array slot j holds index j (mod m).
  return sfft.rfft(np.roll(p.q, -p.n), workers=worker_count())


def _complex_power(x: np.ndarray, k: int) -> np.ndarray:
  """x**k elementwise by repeated squaring (O(log k) multiplications)."""
  result = np.ones_like(x)
  base = x.copy()
  while True:
    if k & 1:
      result *= base
    k >>= 1
    if not k:
      return result
    base *= base


def _from_spectrum(spec: np.ndarray, h: float, n: int, shift: float) -> tuple[DiscretePrv, int]:
  m = 2 * n + 1
  centered = sfft.irfft(spec, n=m, workers=worker_count())
  carry, mu = reduce_shift(shift, h)
  q = np.roll(centered, n + carry)
  q = _clamp(q)
  return DiscretePrv(h=h, mu=mu, n=n, q=q), carry


def _clamp(q: np.ndarray) -> np.ndarray:
  neg = q < 0
  if neg.any():
    worst = float(q[neg].min())
    if worst < -NEGATIVE_CLAMP:
      raise ConvolutionError(
          f"FFT produced negative mass {worst:.3e}; round-off is too large for this grid")
    q = np.where(neg, 0.0, q)
  total = q.sum()
  if abs(total - 1.0) > MASS_TOL:
    raise ConvolutionError(f"total mass drifted to {total!r} after clamping")
  return q / total


def _check_grids(pmfs: Sequence[DiscretePrv]):
  first = pmfs[0]
  for p in pmfs[1:]:
    if not first.same_grid(p):
      raise ValueError(
          f"grid mismatch: (h={first.h}, n={first.n}) vs (h={p.h}, n={p.n})")


def is_identity(p: DiscretePrv) -> bool:
  return p.mu == 0.0 and p.q[p.n] == 1.0


def convolve_all(pmfs: Sequence[DiscretePrv]) -> WrappedSum:
  """Circular convolution of any number of pmfs sharing one grid."""
  pmfs = list(pmfs)
  if not pmfs:
    raise ValueError("need at least one operand")
  _check_grids(pmfs)
  folds = len(pmfs)
  # A point mass at 0 is the identity; skipping it keeps results bit-equal.
  pmfs = [p for p in pmfs if not is_identity(p)] or pmfs[:1]
  first = pmfs[0]
  if len(pmfs) == 1:
    return WrappedSum(first, folds, 0)
  spec = _spectrum(first)
  spec = spec / spec[0].real
  for p in pmfs[1:]:
    s = _spectrum(p)
    spec *= s / s[0].real
  shift = math.fsum(p.mu for p in pmfs)
  result, carry = _from_spectrum(spec, first.h, first.n, shift)
  return WrappedSum(result, folds, carry)


def circular_convolve(a: DiscretePrv, b: DiscretePrv) -> DiscretePrv:
  """Distribution of ``A + B mod 2L`` for independent A ~ a and B ~ b."""
  return convolve_all([a, b]).result


def self_convolve_power(p: DiscretePrv, k: int) -> DiscretePrv:
  """k-fold circular self-convolution: one FFT, a k-th power, one inverse FFT."""
  return self_convolve_wrapped(p, k).result


def self_convolve_wrapped(p: DiscretePrv, k: int) -> WrappedSum:
  if int(k) != k or k < 1:
    raise ValueError(f"k must be a positive integer, got {k}")
  k = int(k)
  if k == 1:
    return WrappedSum(p, 1, 0)
  spec = _spectrum(p)
  spec = _complex_power(spec / spec[0].real, k)
  result, carry = _from_spectrum(spec, p.h, p.n, k * p.mu)
  return WrappedSum(result, k, carry)
