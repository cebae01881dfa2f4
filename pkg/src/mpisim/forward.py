"""Receive-coil voltage simulation for field models and particle ensembles.

Three simulators of decreasing generality:

- simulate_general: Faraday's law on the mean magnetization integral,
  differentiated by central differences at the sample spacing.  Valid for
  any field; serves as the reference oracle.
- simulate_parallel: assumes B and dB/dt are parallel wherever the
  concentration sits, which turns the derivative into the scalar factor
  mbar'(|B|).  Exact for static field-free-line fields in the z = 0 plane
  and for one-dimensional field-free-point drives; a good approximation
  for slowly rotating lines (f_d >> f_rot).
- simulate_piecewise: the parallel model with mbar' replaced by its
  staircase approximation; shares its quadrature with the system matrix
  so that the trace equals the matrix-vector product.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .fields import MU0, FieldEvaluator, FieldModel
from .magnetization import LangevinParams, MagnetizationApprox, mbar_over_b, mbar_prime
from .phantom import ConcentrationGrid

_DEFAULT_BLOCK = 256


@dataclass(frozen=True)
class ReceiveCoil:
    """Homogeneous receive coil: constant sensitivity vector (T/A by convention)."""

    sensitivity: tuple
    index: int = 0

    def __post_init__(self):
        s = tuple(float(v) for v in self.sensitivity)
        if len(s) != 3 or not np.any(np.asarray(s)):
            raise ConfigError("coil sensitivity must be a nonzero 3-vector")
        object.__setattr__(self, "sensitivity", s)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.sensitivity)


def coil_along(axis: str, index: int | None = None) -> ReceiveCoil:
    try:
        i = "xyz".index(axis)
    except ValueError:
        raise ConfigError(f"coil axis must be x, y or z, got {axis!r}") from None
    vec = [0.0, 0.0, 0.0]
    vec[i] = 1.0
    return ReceiveCoil(sensitivity=tuple(vec), index=i if index is None else index)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Sampling and scan-timing parameters.

    f_rot = 0 means a non-rotating scan (static line or point drive).  When
    f_rot > 0 the duration must cover an integer number of line rotation
    periods 1/f_rot so spectra resolve on the rotation grid.
    """

    f_d: float
    sample_rate: float
    duration: float
    f_rot: float = 0.0
    t0: float = 0.0
    highpass_cutoff: float | None = None
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not (self.f_d > 0 and self.sample_rate > 0 and self.duration > 0):
            raise ConfigError("f_d, sample_rate and duration must be positive")
        if self.f_rot < 0:
            raise ConfigError("f_rot must be >= 0")
        if self.sample_rate <= 2 * self.f_d:
            raise ConfigError("sample rate must exceed twice the drive frequency")
        n = self.duration * self.sample_rate
        if abs(n - round(n)) > 1e-6:
            raise ConfigError("duration must be an integer number of samples")
        if self.f_rot > 0:
            k = self.duration * self.f_rot
            if abs(k - round(k)) > 1e-9:
                raise ConfigError(
                    "duration must be an integer number of rotation periods")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def cutoff(self) -> float:
        return 1.4 * self.f_d if self.highpass_cutoff is None else self.highpass_cutoff

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


@dataclass
class SignalTrace:
    """Uniformly sampled coil voltage."""

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    coil_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ConfigError("trace samples must be 1-D")

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples ** 2)))


def _time_blocks(n: int, block: int):
    for start in range(0, n, block):
        yield start, min(start + block, n)


def _run_blocks(times: np.ndarray, worker, n_workers: int, block: int) -> np.ndarray:
    """Fill a result vector block by block; merge order is by block index."""
    out = np.empty(times.size)
    spans = list(_time_blocks(times.size, block))
    if n_workers <= 1:
        for lo, hi in spans:
            out[lo:hi] = worker(times[lo:hi])
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [(lo, hi, pool.submit(worker, times[lo:hi])) for lo, hi in spans]
            for lo, hi, fut in futures:
                out[lo:hi] = fut.result()
    return out


def simulate_parallel(model: FieldModel, grid: ConcentrationGrid, coil: ReceiveCoil,
                      config: AcquisitionConfig, params: LangevinParams,
                      n_workers: int = 1, block: int = _DEFAULT_BLOCK) -> SignalTrace:
    """Voltage under the parallel-velocity-field model.

    u(t) = -mu0 * sum_k c_k <rho, dB/dt(r_k, t)> mbar'(|B(r_k, t)|) vol.
    """
    ev = FieldEvaluator(model, grid.centers())
    weights = grid.flat() * grid.cell_volume
    rho = coil.vector

    def worker(tblock):
        b = ev.field(tblock)
        bdot = ev.field_dt(tblock)
        mag = np.sqrt(np.einsum("jkt,jkt->kt", b, b))
        proj = np.einsum("j,jkt->kt", rho, bdot)
        return -MU0 * (weights @ (proj * mbar_prime(params, mag)))

    samples = _run_blocks(config.times(), worker, n_workers, block)
    return SignalTrace(samples=samples, sample_rate=config.sample_rate,
                       t0=config.t0, coil_index=coil.index)


def simulate_general(model: FieldModel, grid: ConcentrationGrid, coil: ReceiveCoil,
                     config: AcquisitionConfig, params: LangevinParams,
                     n_workers: int = 1, block: int = _DEFAULT_BLOCK) -> SignalTrace:
    """Faraday-law voltage without any parallelity assumption.

    The magnetization integral I(t) = int <rho, mbar(|B|) B/|B|> c dr is
    evaluated at the sample times extended by one step on each side and
    differentiated by central differences, so the trace keeps full length.
    """
    ev = FieldEvaluator(model, grid.centers())
    weights = grid.flat() * grid.cell_volume
    rho = coil.vector
    dt = 1.0 / config.sample_rate

    def integral(tblock):
        b = ev.field(tblock)
        mag = np.sqrt(np.einsum("jkt,jkt->kt", b, b))
        proj = np.einsum("j,jkt->kt", rho, b)
        return weights @ (proj * mbar_over_b(params, mag))

    times = config.times()
    extended = np.concatenate([[times[0] - dt], times, [times[-1] + dt]])
    ivals = _run_blocks(extended, integral, n_workers, block)
    samples = -MU0 * (ivals[2:] - ivals[:-2]) / (2.0 * dt)
    return SignalTrace(samples=samples, sample_rate=config.sample_rate,
                       t0=config.t0, coil_index=coil.index)


def simulate_piecewise(model: FieldModel, grid: ConcentrationGrid, coil: ReceiveCoil,
                       config: AcquisitionConfig, approx: MagnetizationApprox,
                       subsampling: int = 1, n_workers: int = 1,
                       block: int = _DEFAULT_BLOCK) -> SignalTrace:
    """Parallel model with the staircase mbar'; quadrature shared with sysmat.

    With the same grid and subsampling this equals the system matrix times
    the flat concentration, up to summation order.
    """
    from . import sysmat

    quad = sysmat.CellQuadrature(model, grid, subsampling)
    c = grid.flat()

    def worker(tblock):
        return quad.weights(approx, coil.vector, tblock).T @ c

    samples = _run_blocks(config.times(), worker, n_workers, block)
    return SignalTrace(samples=samples, sample_rate=config.sample_rate,
                       t0=config.t0, coil_index=coil.index)


def highpass_mask(n: int, sample_rate: float, cutoff: float) -> np.ndarray:
    """DFT-bin keep mask: bins with |frequency| < cutoff are dropped."""
    freqs = np.fft.fftfreq(n, d=1.0 / sample_rate)
    return (np.abs(freqs) >= cutoff).astype(float)


def apply_highpass(trace: SignalTrace, cutoff: float) -> SignalTrace:
    """Ideal DFT brick-wall high-pass; removes every bin below cutoff."""
    if cutoff <= 0:
        raise ConfigError("cutoff must be positive")
    mask = highpass_mask(trace.samples.size, trace.sample_rate, cutoff)
    filtered = np.real(np.fft.ifft(np.fft.fft(trace.samples) * mask))
    return replace(trace, samples=filtered)


def add_noise(trace: SignalTrace, sigma: float, seed: int) -> SignalTrace:
    """Additive white Gaussian noise from a seeded generator; sigma 0 is exact."""
    if sigma < 0:
        raise ConfigError("noise sigma must be >= 0")
    noise = np.random.default_rng(seed).normal(0.0, sigma, trace.samples.size)
    return replace(trace, samples=trace.samples + noise)


def save_trace_csv(trace: SignalTrace, path, comments=()):
    with open(path, "w") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("t,volts\n")
        for t, v in zip(trace.times(), trace.samples):
            fh.write(f"{t:.17g},{v:.17g}\n")


def load_trace_csv(path, sample_rate: float | None = None,
                   coil_index: int = 0) -> SignalTrace:
    skip = 1
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            skip += 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ConfigError(f"{path}: expected two CSV columns t,volts")
    t = data[:, 0]
    if sample_rate is None:
        sample_rate = 1.0 / (t[1] - t[0])
    return SignalTrace(samples=data[:, 1], sample_rate=sample_rate,
                       t0=float(t[0]), coil_index=coil_index)


def save_trace_bin(trace: SignalTrace, path):
    """ASCII header 'T sample_rate t0 coil', then float64 samples."""
    header = (f"{trace.samples.size} {trace.sample_rate:.17g} "
              f"{trace.t0:.17g} {trace.coil_index}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(trace.samples.astype("<f8").tobytes())


def load_trace_bin(path) -> SignalTrace:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4:
            raise ConfigError(f"{path}: malformed trace header")
        n = int(header[0])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n:
        raise ConfigError(f"{path}: expected {n} samples, got {data.size}")
    return SignalTrace(samples=data.copy(), sample_rate=float(header[1]),
                       t0=float(header[2]), coil_index=int(header[3]))
