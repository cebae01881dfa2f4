"""Radon tools and the filtered-back-projection chain."""

import math

import numpy as np
import pytest

from mpisim import magnetization as mag
from mpisim.errors import ConfigError
from mpisim.fbp import (
    ScanGeometry,
    Sinogram,
    fbp_reconstruct,
    load_sinogram_csv,
    radon_transform,
    save_sinogram_csv,
    signal_to_sinogram,
    subtract_edge_baseline,
    zero_pad,
)
from mpisim.fields import build_topology
from mpisim.forward import AcquisitionConfig, coil_along, simulate_parallel
from mpisim.phantom import build_disc_phantom, empty_grid
from mpisim.recon import nrmse, optimal_scale


def disc_grid(radius=0.015, fov=0.05, spacing=0.05 / 64):
    return build_disc_phantom(fov, [2 * radius], spacing, centers=[(0.0, 0.0)])


def analytic_disc_sinogram(radius, angles, displacements):
    s = np.asarray(displacements)
    chord = 2.0 * np.sqrt(np.maximum(radius**2 - s**2, 0.0))
    return Sinogram(values=np.tile(chord, (len(angles), 1)),
                    angles=np.asarray(angles), displacements=s, meta={})


def test_scan_geometry():
    geo = ScanGeometry(g=1.0, d=0.1, f_d=25e3, f_rot=1e3)
    assert geo.amplitude == pytest.approx(0.05)
    assert geo.half_angle(0.25e-3) == pytest.approx(math.pi * 0.25)
    static = ScanGeometry(g=2.0, d=0.1, f_d=25e3, alpha=0.8)
    assert static.amplitude == pytest.approx(0.025)
    assert static.half_angle(123.0) == pytest.approx(0.4)
    with pytest.raises(ConfigError):
        ScanGeometry(g=1.0, d=0.1, f_d=25e3)  # neither f_rot nor alpha
    with pytest.raises(ConfigError):
        ScanGeometry(g=-1.0, d=0.1, f_d=25e3, alpha=0.1)
    with pytest.raises(ConfigError):
        ScanGeometry(g=1.0, d=0.1, f_d=25e3, alpha=0.1, slab_thickness=0.0)


def test_sinogram_shape_validation():
    with pytest.raises(ConfigError):
        Sinogram(values=np.zeros((3, 5)), angles=np.zeros(3),
                 displacements=np.zeros(4), meta={})


def test_radon_disc_chords():
    grid = disc_grid()
    r = 0.015
    s = np.linspace(-0.025, 0.025, 51)
    sino = radon_transform(grid, [0.0, 0.7, 1.3], s)
    mid = s.size // 2
    for row in sino.values:
        # center chord equals the diameter; profile decays away from center
        assert row[mid] == pytest.approx(2 * r, rel=0.02)
        assert np.all(row[np.abs(s) > r + 0.002] < 1e-12)
        inner = row[mid:]
        assert np.all(np.diff(inner) < 0.002)
    # rotation invariance of the centered disc, away from the rastered rim
    core = np.abs(s) < r - 0.003
    assert np.allclose(sino.values[0][core], sino.values[1][core],
                       atol=0.05 * 2 * r)


def test_radon_shift_and_linearity():
    fov, spacing = 0.05, 0.05 / 64
    a = build_disc_phantom(fov, [0.012], spacing, centers=[(0.008, -0.004)])
    b = build_disc_phantom(fov, [0.008], spacing, centers=[(-0.01, 0.006)])
    s = np.linspace(-0.024, 0.024, 97)
    angles = [0.0, 0.5, 1.1, 2.0]
    both = a.with_values(a.values + b.values)
    sino_a = radon_transform(a, angles, s)
    sino_b = radon_transform(b, angles, s)
    sino_ab = radon_transform(both, angles, s)
    assert np.allclose(sino_ab.values, sino_a.values + sino_b.values,
                       atol=1e-12)
    for i, ang in enumerate(angles):
        expect = 0.008 * math.cos(ang) - 0.004 * math.sin(ang)
        peak = s[np.argmax(sino_a.values[i])]
        assert abs(peak - expect) <= 2 * (s[1] - s[0])
    # mass conservation: integral of each projection equals the disc area
    area = a.values[:, :, 0].sum() * spacing**2
    ds = s[1] - s[0]
    assert np.allclose(sino_a.values.sum(axis=1) * ds, area, rtol=0.02)


def test_zero_pad():
    s = np.linspace(-0.01, 0.01, 21)
    sino = Sinogram(values=np.ones((2, 21)), angles=np.array([0.0, 1.0]),
                    displacements=s, meta={})
    padded = zero_pad(sino, 0.015)
    assert padded.displacements[0] < -0.014
    assert np.allclose(np.diff(padded.displacements), s[1] - s[0])
    k = (padded.displacements.size - 21) // 2
    assert np.all(padded.values[:, :k] == 0)
    assert np.all(padded.values[:, k:k + 21] == 1.0)
    assert zero_pad(sino, 0.005) is sino


def test_subtract_edge_baseline():
    s = np.linspace(-0.02, 0.02, 40)
    bump = np.exp(-(s / 0.004) ** 2)
    offsets = np.array([[0.3], [-1.2], [4.5]])
    sino = Sinogram(values=bump[None, :] + offsets,
                    angles=np.array([0.0, 1.0, 2.0]),
                    displacements=s, meta={})
    fixed = subtract_edge_baseline(sino, fraction=0.1)
    # exact up to the Gaussian's own tail mass in the edge bins
    assert np.allclose(fixed.values, bump[None, :], atol=1e-6)
    with pytest.raises(ConfigError):
        subtract_edge_baseline(sino, fraction=0.6)


def test_fbp_recovers_disc_from_analytic_sinogram():
    r = 0.015
    angles = np.linspace(0.0, math.pi, 90, endpoint=False)
    s = np.linspace(-0.025, 0.025, 101)
    sino = analytic_disc_sinogram(r, angles, s)
    template = empty_grid(0.05, 0.05 / 64)
    recon = fbp_reconstruct(sino, template)
    ref = disc_grid()
    scaled = recon.with_values(optimal_scale(recon, ref) * recon.values)
    assert nrmse(scaled, ref) < 0.25
    hann = fbp_reconstruct(sino, template, window="hann")
    scaled_h = hann.with_values(optimal_scale(hann, ref) * hann.values)
    assert nrmse(scaled_h, ref) < 0.30
    # the apodized window suppresses the rim oscillations of the sharp one
    assert scaled_h.values.max() < scaled.values.max()
    with pytest.raises(ConfigError):
        fbp_reconstruct(sino, template, window="boxcar")


def test_fbp_needs_two_bins():
    sino = Sinogram(values=np.ones((1, 1)), angles=np.zeros(1),
                    displacements=np.zeros(1), meta={})
    with pytest.raises(ConfigError):
        fbp_reconstruct(sino, empty_grid(0.01, 0.001))


@pytest.fixture(scope="module")
def point_scan():
    """Rotating line scan of a single lit cell at (6, -3) mm."""
    model = build_topology("rotating_ffl", g=1.0, d=0.1, f_d=25e3, f_rot=1e3)
    grid = empty_grid(0.05, 0.05 / 32)
    vals = np.zeros(grid.dims)
    ix = int(np.argmin(np.abs(grid.axis_coords(0) - 0.006)))
    iy = int(np.argmin(np.abs(grid.axis_coords(1) + 0.003)))
    vals[ix, iy, 0] = 1.0
    grid = grid.with_values(vals)
    point = (grid.axis_coords(0)[ix], grid.axis_coords(1)[iy])
    config = AcquisitionConfig(f_d=25e3, sample_rate=4e6, duration=1e-3,
                               f_rot=1e3)
    params = mag.LangevinParams(m0=1.0, lam=1600.0)
    coils = [coil_along("x"), coil_along("y")]
    traces = [simulate_parallel(model, grid, c, config, params) for c in coils]
    geometry = ScanGeometry(g=1.0, d=0.1, f_d=25e3, f_rot=1e3)
    return traces, coils, geometry, params, point


def test_signal_to_sinogram_geometry(point_scan):
    traces, coils, geometry, params, point = point_scan
    sino = signal_to_sinogram(traces, coils, geometry, n_bins=96)
    assert sino.values.shape == (25, 96)
    assert np.all((sino.angles >= 0) & (sino.angles < math.pi))
    assert np.all(np.diff(sino.angles) >= 0)
    assert sino.meta["kind"] == "scan"
    assert np.all(np.isfinite(sino.values))
    # each projection peaks at the point's signed distance to the line
    px, py = point
    for i in (0, 6, 12, 18, 24):
        theta = sino.angles[i]
        expect = px * math.cos(theta) + py * math.sin(theta)
        peak = sino.displacements[np.argmax(np.abs(sino.values[i]))]
        assert abs(peak - expect) <= 2.5 * (sino.displacements[1]
                                            - sino.displacements[0])


def test_signal_to_sinogram_fills_sparse_bins(point_scan):
    traces, coils, geometry, params, point = point_scan
    # 128 bins > samples per half sweep, so some bins get no samples and
    # must be bridged by interpolation rather than left at zero
    sino = signal_to_sinogram(traces, coils, geometry, n_bins=128)
    assert np.all(np.isfinite(sino.values))
    row = np.abs(sino.values[12])
    support = np.where(row > row.max() * 1e-3)[0]
    assert support.size >= 3


def test_signal_to_sinogram_deconvolve_sharpens(point_scan):
    traces, coils, geometry, params, point = point_scan
    plain = signal_to_sinogram(traces, coils, geometry, n_bins=96)
    sharp = signal_to_sinogram(traces, coils, geometry, n_bins=96,
                               deconvolve=True, params=params)
    def width(row):
        a = np.abs(row)
        return int(np.sum(a > 0.5 * a.max()))
    assert width(sharp.values[12]) <= width(plain.values[12])
    with pytest.raises(ConfigError):
        signal_to_sinogram(traces, coils, geometry, deconvolve=True)


def test_signal_to_sinogram_validation(point_scan):
    traces, coils, geometry, params, point = point_scan
    with pytest.raises(ConfigError):
        signal_to_sinogram(traces, coils[:1], geometry)
    with pytest.raises(ConfigError):
        signal_to_sinogram([], [], geometry)


def test_sinogram_csv_round_trip(tmp_path, point_scan):
    traces, coils, geometry, params, point = point_scan
    sino = signal_to_sinogram(traces, coils, geometry, n_bins=32)
    path = tmp_path / "sino.csv"
    save_sinogram_csv(sino, path)
    back = load_sinogram_csv(path)
    assert np.allclose(back.values, sino.values, atol=1e-15)
    assert np.allclose(back.angles, sino.angles, atol=1e-17)
    assert np.allclose(back.displacements, sino.displacements, atol=1e-17)
    bad = tmp_path / "bad.csv"
    bad.write_text("just,numbers\n1,2\n")
    with pytest.raises(ConfigError):
        load_sinogram_csv(bad)
