"""Langevin mean magnetization and its piecewise-constant approximation.

The scalar magnetization modulus is mbar(B) = m0 * L(lam * B) with the
Langevin function L(x) = coth(x) - 1/x.  Forward models need the derivative
mbar'; the discretized system matrix replaces mbar' by a staircase
mbar'_N that is constant on intervals between nodes 0 = x_0 < ... < x_{N+1} = b
and zero beyond the threshold b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_SERIES_CUTOFF = 1e-4


def langevin(x):
    """L(x) = coth(x) - 1/x, odd, with a Taylor branch near the origin."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    out = 1.0 / np.tanh(xs) - 1.0 / xs
    x2 = x * x
    series = x * (1.0 / 3.0 - x2 / 45.0 + 2.0 * x2 * x2 / 945.0)
    return np.where(small, series, out)[()]


def langevin_derivative(x):
    """L'(x) = 1/x^2 - 1/sinh(x)^2; L'(0) = 1/3 on an explicit branch."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    # beyond ~350 sinh(x)^2 overflows; the term is below eps from ~20 on
    big = np.abs(x) > 350.0
    xs = np.where(small | big, 1.0, x)
    out = 1.0 / (xs * xs) - 1.0 / np.sinh(xs) ** 2
    out = np.where(big, 1.0 / np.where(big, x * x, 1.0), out)
    x2 = x * x
    series = 1.0 / 3.0 - x2 / 15.0 + 2.0 * x2 * x2 / 189.0
    return np.where(small, series, out)[()]


def langevin_over_x(x):
    """L(x)/x, even, finite at 0 (value 1/3).  Used for mbar(B)/B."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    out = (1.0 / np.tanh(xs) - 1.0 / xs) / xs
    x2 = x * x
    series = 1.0 / 3.0 - x2 / 45.0 + 2.0 * x2 * x2 / 945.0
    return np.where(small, series, out)[()]


@dataclass(frozen=True)
class LangevinParams:
    """Particle parameters: saturation moment m0 (A m^2) and lam = mu0 m0 / (kB T)."""

    m0: float
    lam: float

    def __post_init__(self):
        if not (self.m0 > 0 and self.lam > 0):
            raise ConfigError("m0 and lam must be positive")


def mbar(params: LangevinParams, b):
    """Mean magnetization modulus at field magnitude b (tesla)."""
    return params.m0 * langevin(params.lam * np.asarray(b, dtype=float))


def mbar_prime(params: LangevinParams, b):
    """d mbar / dB at field magnitude b; mbar'(0) = m0 lam / 3."""
    return params.m0 * params.lam * langevin_derivative(
        params.lam * np.asarray(b, dtype=float))


def mbar_over_b(params: LangevinParams, b):
    """mbar(b)/b, finite at b = 0.  Stable direction factor for M = mbar(B) B/|B|."""
    return params.m0 * params.lam * langevin_over_x(
        params.lam * np.asarray(b, dtype=float))


@dataclass(frozen=True)
class MagnetizationApprox:
    """Piecewise-constant approximation of mbar' on [0, b), even in its argument.

    ladder holds the full node sequence (0, x_1, ..., x_N, b); slopes[n] is
    the constant value on [ladder[n], ladder[n+1]).  Beyond b the value is 0.
    """

    ladder: tuple
    slopes: tuple
    scheme: str
    threshold: float

    @property
    def n_intervals(self) -> int:
        return len(self.slopes)

    def eval(self, x):
        """mbar'_N(|x|); zero for |x| >= threshold."""
        ax = np.abs(np.asarray(x, dtype=float))
        ladder = np.asarray(self.ladder)
        idx = np.searchsorted(ladder, ax, side="right") - 1
        idx = np.clip(idx, 0, len(self.slopes))
        padded = np.append(np.asarray(self.slopes), 0.0)
        return padded[idx][()]

    def eval_antiderivative(self, x):
        """The odd antiderivative mbar_N with mbar_N(0) = 0, constant beyond b."""
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        ladder = np.asarray(self.ladder)
        slopes = np.asarray(self.slopes)
        cum = np.concatenate([[0.0], np.cumsum(slopes * np.diff(ladder))])
        idx = np.searchsorted(ladder, ax, side="right") - 1
        idx = np.clip(idx, 0, len(slopes))
        padded_slope = np.append(slopes, 0.0)
        base = cum[idx] + padded_slope[idx] * (np.minimum(ax, self.threshold)
                                               - ladder[np.minimum(idx, len(slopes))])
        return (np.sign(x) * base)[()]


def eval_approx(approx: MagnetizationApprox, x):
    return approx.eval(x)


def eval_approx_antiderivative(approx: MagnetizationApprox, x):
    return approx.eval_antiderivative(x)


def _validate_nodes(nodes, b: float) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1:
        raise ConfigError("nodes must be a 1-D sequence")
    ladder = np.concatenate([[0.0], nodes, [b]])
    if not np.all(np.diff(ladder) > 0):
        raise ConfigError("nodes must be strictly increasing inside (0, b)")
    return ladder


def build_approx(params: LangevinParams, nodes, b: float,
                 scheme: str = "secant") -> MagnetizationApprox:
    """Build the staircase approximation from interior nodes and threshold b.

    scheme 'secant' uses the difference quotient of mbar over each interval
    (the antiderivative then matches mbar at every node); scheme 'tangent'
    uses mbar'(0) on the first interval and mbar' at interval midpoints
    elsewhere.
    """
    if not b > 0:
        raise ConfigError("threshold b must be positive")
    ladder = _validate_nodes(nodes, b)
    lo, hi = ladder[:-1], ladder[1:]
    if scheme == "secant":
        slopes = (mbar(params, hi) - mbar(params, lo)) / (hi - lo)
    elif scheme == "tangent":
        slopes = mbar_prime(params, (lo + hi) / 2.0)
        slopes[0] = mbar_prime(params, 0.0)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    return MagnetizationApprox(ladder=tuple(ladder), slopes=tuple(slopes),
                               scheme=scheme, threshold=float(b))


def nodes_equidistant(n: int, b: float) -> np.ndarray:
    """Interior nodes x_k = b k / (N + 1), k = 1..N."""
    if n < 1:
        raise ConfigError("need at least one interior node")
    if not b > 0:
        raise ConfigError("threshold b must be positive")
    return b * np.arange(1, n + 1) / (n + 1)


def l1_functional(params: LangevinParams, nodes, b: float) -> float:
    """Closed-form L1 error of the tangent staircase.

    Equals the integral of |mbar' - mbar'_N| over [0, b] when mbar' is
    positive and strictly decreasing, since the tangent value at each
    interval midpoint splits the interval into one over- and one
    under-shooting half.
    """
    ladder = _validate_nodes(nodes, b)
    lo, hi = ladder[:-1], ladder[1:]
    return float(np.sum(2.0 * mbar(params, (lo + hi) / 2.0)
                        - mbar(params, hi) - mbar(params, lo)))


def _l1_gradient(params: LangevinParams, ladder: np.ndarray) -> np.ndarray:
    mids = (ladder[:-1] + ladder[1:]) / 2.0
    dmid = mbar_prime(params, mids)
    return dmid[:-1] + dmid[1:] - 2.0 * mbar_prime(params, ladder[1:-1])


def _sampled_l1_error(params: LangevinParams, ladder: np.ndarray, scheme: str,
                      xs: np.ndarray, dtrue: np.ndarray) -> float:
    approx = build_approx(params, ladder[1:-1], ladder[-1], scheme)
    return float(np.trapezoid(np.abs(dtrue - approx.eval(xs)), xs))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def nodes_l1_optimal(n: int, b: float, params: LangevinParams,
                     scheme: str = "tangent", grad_tol: float = 1e-10,
                     max_sweeps: int = 400) -> np.ndarray:
    """Interior nodes minimizing the L1 error of the staircase on [0, b].

    Projected coordinate descent with golden-section line searches, started
    from the equidistant nodes.  For the tangent scheme the objective is the
    closed-form functional and the stop rule is the analytic gradient norm
    (grad_tol, relative to the natural scale m0*lam); the secant scheme
    minimizes a densely sampled L1 error and stops on objective stagnation.
    """
    if scheme not in ("tangent", "secant"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    ladder = np.concatenate([[0.0], nodes_equidistant(n, b), [b]])
    scale = params.m0 * params.lam
    gap_tol = 1e-12 * b

    if scheme == "secant":
        xs = np.linspace(0.0, b, 20001)
        dtrue = mbar_prime(params, xs)

        def objective(lad):
            return _sampled_l1_error(params, lad, "secant", xs, dtrue)
    else:
        def objective(lad):
            return l1_functional(params, lad[1:-1], b)

    prev = objective(ladder)
    for _ in range(max_sweeps):
        for i in range(1, n + 1):
            lo = ladder[i - 1] + gap_tol
            hi = ladder[i + 1] - gap_tol

            def line(x, i=i):
                trial = ladder.copy()
                trial[i] = x
                return objective(trial)

            ladder[i] = _golden_min(line, lo, hi, tol=1e-12 * b)
        current = objective(ladder)
        if scheme == "tangent":
            if np.max(np.abs(_l1_gradient(params, ladder))) < grad_tol * scale:
                break
        elif prev - current <= 1e-14 * max(prev, 1e-300):
            break
        prev = current
    return ladder[1:-1]


def sup_second_derivative(params: LangevinParams, b: float,
                          samples: int = 100001) -> float:
    """Dense-sampling estimate of sup |mbar''| on [0, b]."""
    xs = np.linspace(0.0, b, samples)
    lam = params.lam
    x = lam * xs
    small = np.abs(x) < _SERIES_CUTOFF
    xs_safe = np.where(small, 1.0, x)
    second = -2.0 / xs_safe ** 3 + 2.0 * np.cosh(xs_safe) / np.sinh(xs_safe) ** 3
    series = -2.0 * x / 15.0 + 8.0 * x ** 3 / 189.0
    second = np.where(small, series, second)
    return float(np.max(np.abs(params.m0 * lam * lam * second)))
