"""Radon-domain baseline: sinogram extraction and filtered back-projection.

Line-scanner voltages divide by the sweep velocity factor to become
projection samples; regridding onto uniform displacements and angles gives
a sinogram that classic Ram-Lak FBP inverts.  The continuous line rotation
is deliberately not corrected inside a projection window, and the
magnetization kernel stays in the image unless Wiener deconvolution is
requested.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .fields import MU0
from .magnetization import LangevinParams, mbar_prime
from .phantom import ConcentrationGrid

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ScanGeometry:
    """Nominal FFL scan parameters used by the Radon-domain pipeline.

    slab_thickness is the extent of the (planar) object along the line
    direction's perpendicular in z; dividing by it converts the scanner's
    volume integrals into in-plane line integrals, so scan sinograms share
    units with radon_transform output.
    """

    g: float
    d: float
    f_d: float
    f_rot: float = 0.0
    alpha: float | None = None
    slab_thickness: float = 1e-3

    def __post_init__(self):
        if not (self.g > 0 and self.d > 0 and self.f_d > 0):
            raise ConfigError("g, d and f_d must be positive")
        if self.f_rot < 0:
            raise ConfigError("f_rot must be >= 0")
        if self.f_rot == 0 and self.alpha is None:
            raise ConfigError("need f_rot > 0 or a static angle alpha")
        if not self.slab_thickness > 0:
            raise ConfigError("slab_thickness must be positive")

    @property
    def amplitude(self) -> float:
        """Maximal line displacement d / (2 g)."""
        return self.d / (2.0 * self.g)

    def half_angle(self, t: float) -> float:
        if self.f_rot > 0:
            return math.pi * self.f_rot * t
        return self.alpha / 2.0


@dataclass
class Sinogram:
    """Projection stack: values[i, j] at angles[i], displacements[j].

    The angle refers to the line normal (cos a, sin a); displacements are
    signed offsets along that normal in meters.
    """

    values: np.ndarray
    angles: np.ndarray
    displacements: np.ndarray
    meta: dict

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        self.displacements = np.asarray(self.displacements, dtype=float)
        if self.values.shape != (self.angles.size, self.displacements.size):
            raise ConfigError("sinogram shape does not match its axes")


def _bilinear_plane(grid: ConcentrationGrid, x, y):
    """Bilinear interpolation on the z-index-0 plane, zero outside."""
    plane = grid.values[:, :, 0]
    nx, ny = plane.shape
    fx = (np.asarray(x) - grid.origin[0]) / grid.spacing[0]
    fy = (np.asarray(y) - grid.origin[1]) / grid.spacing[1]
    i0 = np.floor(fx).astype(int)
    j0 = np.floor(fy).astype(int)
    tx = fx - i0
    ty = fy - j0
    out = np.zeros(np.broadcast(fx, fy).shape)
    for di, wdi in ((0, 1.0 - tx), (1, tx)):
        for dj, wdj in ((0, 1.0 - ty), (1, ty)):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
            vals = np.where(ok, plane[np.clip(ii, 0, nx - 1),
                                      np.clip(jj, 0, ny - 1)], 0.0)
            out = out + wdi * wdj * vals
    return out


def radon_transform(grid: ConcentrationGrid, angles, displacements,
                    step_factor: float = 0.5) -> Sinogram:
    """Sampled line integrals of the z = 0 plane.

    For each angle the integration direction is perpendicular to the normal
    (cos a, sin a); samples are spaced step_factor times the smaller cell
    side and interpolated bilinearly, zero outside the grid.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    displacements = np.atleast_1d(np.asarray(displacements, dtype=float))
    step = step_factor * min(grid.spacing[0], grid.spacing[1])
    nx, ny = grid.dims[0], grid.dims[1]
    half = 0.5 * math.hypot(nx * grid.spacing[0], ny * grid.spacing[1])
    w = np.arange(-half, half + step, step)
    values = np.empty((angles.size, displacements.size))
    for i, a in enumerate(angles):
        normal = np.array([math.cos(a), math.sin(a)])
        tangent = np.array([-math.sin(a), math.cos(a)])
        x = displacements[:, None] * normal[0] + w[None, :] * tangent[0]
        y = displacements[:, None] * normal[1] + w[None, :] * tangent[1]
        values[i] = _bilinear_plane(grid, x, y).sum(axis=1) * step
    return Sinogram(values=values, angles=angles, displacements=displacements,
                    meta={"kind": "radon"})


def _wrap_angle(theta: float):
    """Map a normal angle into [0, pi); returns (angle, flip_sign_of_s)."""
    flip = False
    while theta < 0:
        theta += math.pi
        flip = not flip
    while theta >= math.pi:
        theta -= math.pi
        flip = not flip
    return theta, flip


def signal_to_sinogram(traces, coils, geometry: ScanGeometry, n_bins: int = 80,
                       deconvolve: bool = False,
                       params: LangevinParams | None = None, nsr: float = 1e-2,
                       decimate: int = 1, cos_guard: float = 0.05) -> Sinogram:
    """Regrid line-scanner voltages into a sinogram.

    One projection per drive period, taken from the monotone half-sweep
    t in [(p + 1/4)/f_d, (p + 3/4)/f_d).  Samples divide by the velocity
    factor -2 pi d mu0 f_d cos(2 pi f_d t) <rho, e>, are dropped where
    |cos| < cos_guard, and bin-average onto n_bins uniform displacements in
    [-d/2g, d/2g].  Multiple coils combine by least squares over their
    geometric weights <rho, e>.  With deconvolve, each projection is
    Wiener-deconvolved by the kernel mbar'(|2 g s|).
    """
    if not traces or len(traces) != len(coils):
        raise ConfigError("need one coil per trace")
    if deconvolve and params is None:
        raise ConfigError("deconvolution needs Langevin parameters")
    first = traces[0]
    for tr in traces:
        if tr.samples.size != first.samples.size or tr.sample_rate != first.sample_rate:
            raise ConfigError("traces disagree on sampling")
    fs = first.sample_rate
    n_total = first.samples.size
    duration = n_total / fs
    n_proj = int(round(duration * geometry.f_d))
    if n_proj < 1:
        raise ConfigError("scan shorter than one drive period")
    amp = geometry.amplitude
    edges = np.linspace(-amp, amp, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rhos = np.array([c.vector for c in coils])
    prefactor = (-TWO_PI * geometry.d * MU0 * geometry.f_d
                 * geometry.slab_thickness)

    rows = np.zeros((n_proj, n_bins))
    angles = np.empty(n_proj)
    weak = 0
    for p in range(n_proj):
        t_lo = (p + 0.25) / geometry.f_d
        t_hi = (p + 0.75) / geometry.f_d
        j0 = int(np.ceil(t_lo * fs - 1e-9))
        j1 = int(np.ceil(t_hi * fs - 1e-9))
        idx = np.arange(j0, min(j1, n_total))[::decimate]
        t = idx / fs
        phase = TWO_PI * geometry.f_d * t
        cosphi = np.cos(phase)
        keep = np.abs(cosphi) >= cos_guard
        beta = geometry.half_angle((p + 0.5) / geometry.f_d)
        e = np.array([math.sin(beta), -math.cos(beta), 0.0])
        a = rhos @ e
        denom = float(a @ a)
        if denom < 0.1:
            weak += 1
        s = amp * np.sin(phase[keep])
        u = np.stack([traces[k].samples[idx[keep]] for k in range(len(traces))])
        proj = (a @ u) / (prefactor * cosphi[keep] * max(denom, 1e-12))

        theta, flip = _wrap_angle(beta - math.pi / 2.0)
        if flip:
            s = -s
        angles[p] = theta
        which = np.clip(np.digitize(s, edges) - 1, 0, n_bins - 1)
        sums = np.bincount(which, weights=proj, minlength=n_bins)
        counts = np.bincount(which, minlength=n_bins)
        filled = counts > 0
        row = np.where(filled, sums / np.maximum(counts, 1), 0.0)
        if not filled.all():
            # the sine sweep spends little time near s = 0, so interior bins
            # can end up without samples; bridge them from filled neighbors
            row = np.interp(centers, centers[filled], row[filled])
        rows[p] = row
    if weak:
        log.warning("%d projections have weak coil coverage (<rho, e> near 0)",
                    weak)
    span = angles.max() - angles.min() if n_proj > 1 else 0.0
    if n_proj > 1 and span < math.radians(150.0):
        log.warning("angular coverage spans only %.1f degrees", math.degrees(span))
    order = np.argsort(angles)
    rows = rows[order]
    angles = angles[order]
    if deconvolve:
        rows = _wiener_rows(rows, centers, geometry, params, nsr)
    meta = {"kind": "scan", "g": geometry.g, "d": geometry.d,
            "f_d": geometry.f_d, "f_rot": geometry.f_rot,
            "deconvolved": bool(deconvolve)}
    return Sinogram(values=rows, angles=angles, displacements=centers, meta=meta)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1)).bit_length()


def _wiener_rows(rows, centers, geometry, params, nsr):
    n = centers.size
    ds = centers[1] - centers[0]
    nfft = _next_pow2(2 * n)
    offsets = ((np.arange(nfft) + nfft // 2) % nfft - nfft // 2) * ds
    kern = mbar_prime(params, 2.0 * geometry.g * np.abs(offsets)) * ds
    khat = np.fft.fft(kern)
    power = np.abs(khat) ** 2
    floor = nsr * power.max()
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        padded = np.zeros(nfft)
        padded[:n] = row
        rhat = np.fft.fft(padded) * np.conj(khat) / (power + floor)
        out[i] = np.real(np.fft.ifft(rhat))[:n]
    return out


def subtract_edge_baseline(sino: Sinogram, fraction: float = 0.1) -> Sinogram:
    """Remove per-projection constant offsets, estimated from the edge bins.

    A high-pass on the raw voltages deletes their drive-frequency component,
    which after velocity division reappears as one constant per projection.
    When the object keeps clear of the sweep limits the outermost displacement
    bins carry no signal, so their mean estimates that constant exactly.
    """
    if not 0 < fraction < 0.5:
        raise ConfigError("edge fraction must be in (0, 0.5)")
    n = sino.displacements.size
    k = max(1, int(round(fraction * n)))
    edges = np.concatenate([sino.values[:, :k], sino.values[:, -k:]], axis=1)
    return replace(sino, values=sino.values - edges.mean(axis=1, keepdims=True))


def zero_pad(sino: Sinogram, half_width: float) -> Sinogram:
    """Extend the displacement axis symmetrically with zeros to half_width."""
    s = sino.displacements
    ds = s[1] - s[0]
    extra = int(np.ceil((half_width - s.max()) / ds))
    if extra <= 0:
        return sino
    left = s[0] - ds * np.arange(extra, 0, -1)
    right = s[-1] + ds * np.arange(1, extra + 1)
    values = np.zeros((sino.values.shape[0], s.size + 2 * extra))
    values[:, extra:extra + s.size] = sino.values
    return replace(sino, values=values,
                   displacements=np.concatenate([left, s, right]))


def _ramp_filter(row: np.ndarray, ds: float, window: str) -> np.ndarray:
    n = row.size
    nfft = _next_pow2(2 * n)
    freqs = np.fft.fftfreq(nfft, d=ds)
    filt = np.abs(freqs)
    if window == "hann":
        fmax = np.abs(freqs).max()
        filt = filt * 0.5 * (1.0 + np.cos(math.pi * freqs / fmax))
    elif window != "ramlak":
        raise ConfigError(f"unknown filter window {window!r}")
    padded = np.zeros(nfft)
    padded[:n] = row
    return np.real(np.fft.ifft(np.fft.fft(padded) * filt))[:n]


def fbp_reconstruct(sino: Sinogram, template: ConcentrationGrid,
                    window: str = "ramlak") -> ConcentrationGrid:
    """Ram-Lak filtered back-projection onto the template's grid.

    Each projection is DFT-filtered with |frequency| (zero-padded to kill
    circular wrap), back-projected with linear interpolation along the
    displacement axis, and the angle sum is scaled by pi / n_angles.
    """
    if sino.displacements.size < 2:
        raise ConfigError("sinogram needs at least two displacement bins")
    ds = sino.displacements[1] - sino.displacements[0]
    xs = template.axis_coords(0)
    ys = template.axis_coords(1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    accum = np.zeros_like(gx)
    for i, a in enumerate(sino.angles):
        q = _ramp_filter(sino.values[i], ds, window)
        s = gx * math.cos(a) + gy * math.sin(a)
        accum += np.interp(s, sino.displacements, q, left=0.0, right=0.0)
    accum *= math.pi / sino.angles.size
    values = np.repeat(accum[:, :, None], template.dims[2], axis=2)
    return ConcentrationGrid(values=values, spacing=template.spacing,
                             origin=template.origin)


def save_sinogram_csv(sino: Sinogram, path):
    with open(path, "w") as fh:
        fh.write(f"# sinogram {sino.angles.size} {sino.displacements.size}\n")
        fh.write("# angles " + " ".join(f"{a:.17g}" for a in sino.angles) + "\n")
        fh.write("# displacements "
                 + " ".join(f"{s:.17g}" for s in sino.displacements) + "\n")
        for row in sino.values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_sinogram_csv(path) -> Sinogram:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[1] != "sinogram":
            raise ConfigError(f"{path}: not a sinogram file")
        angles = np.array([float(v) for v in fh.readline().split()[2:]])
        disp = np.array([float(v) for v in fh.readline().split()[2:]])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Sinogram(values=values, angles=angles, displacements=disp,
                    meta={"kind": "loaded"})
