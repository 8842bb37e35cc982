"""OFDM baseband physics: transforms, band energies, PAPR/ACLR/CCDF/PSD metrology.

Conventions (fixed once, used everywhere):
  * normalized units, subcarrier spacing 1 and symbol duration T = 1
  * N odd, subcarrier indices {-(N-1)/2, ..., (N-1)/2}
  * time samples at midpoints t_k = -1/2 + (k + 1/2) / (N * O_s)
  * the discrete transform is scaled unitary, so ||z||^2 = ||x||^2 and the
    total-energy Gram matrix is exactly the identity
"""

import warnings
from dataclasses import dataclass, field

import numpy as np


def db(x):
    """Linear power ratio to dB."""
    return 10.0 * np.log10(x)


def from_db(x_db):
    """dB to linear power ratio."""
    return 10.0 ** (np.asarray(x_db) / 10.0)


@dataclass(frozen=True)
class SubcarrierGrid:
    """OFDM dimensioning: N odd subcarriers, temporal oversampling O_s."""

    n_subcarriers: int
    oversampling: int

    def __post_init__(self):
        n, os_ = self.n_subcarriers, self.oversampling
        if not isinstance(n, (int, np.integer)) or n < 3 or n % 2 == 0:
            raise ValueError(f"n_subcarriers must be an odd integer >= 3, got {n}")
        if not isinstance(os_, (int, np.integer)) or os_ < 1:
            raise ValueError(f"oversampling must be a positive integer, got {os_}")

    @property
    def indices(self):
        h = (self.n_subcarriers - 1) // 2
        return np.arange(-h, h + 1)

    @property
    def n_samples(self):
        return self.n_subcarriers * self.oversampling

    @property
    def sample_period(self):
        return 1.0 / self.n_samples

    @property
    def sample_times(self):
        m = self.n_samples
        return -0.5 + (np.arange(m) + 0.5) / m


def build_grid(n_subcarriers, oversampling):
    return SubcarrierGrid(int(n_subcarriers), int(oversampling))


def idft_matrix(grid):
    """Unitary-column oversampled IDFT matrix, shape (N*O_s, N).

    Columns are orthonormal: U^H U = I, so time-domain energy equals
    frequency-domain energy.
    """
    t = grid.sample_times
    n = grid.indices
    m = grid.n_samples
    return np.exp(2j * np.pi * np.outer(t, n)) / np.sqrt(m)


def to_time(x, grid):
    """Oversampled time samples z of the baseband symbol vector x.

    Accepts a single length-N vector or a batch (..., N); returns (..., N*O_s).
    """
    x = np.asarray(x)
    if x.shape[-1] != grid.n_subcarriers:
        raise ValueError(
            f"symbol vector length {x.shape[-1]} != N = {grid.n_subcarriers}"
        )
    return x @ idft_matrix(grid).T


@dataclass(frozen=True)
class GramPair:
    """In-band (V) and total (W) energy quadratic forms on the subcarrier grid."""

    V: np.ndarray
    W: np.ndarray


def _sinc_band_overlap_matrix(n, nodes_per_unit):
    """V by composite Gauss-Legendre quadrature over the in-band interval.

    v_{a,b} = integral of sinc(f-a) sinc(f-b) over [-N/2, N/2], with one
    quadrature panel per unit frequency interval.
    """
    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(nodes_per_unit)
    edges = -n / 2.0 + np.arange(n + 1)
    centers = (edges[:-1] + edges[1:]) / 2.0
    # panels all have width 1
    f = (centers[:, None] + 0.5 * gl_nodes[None, :]).ravel()
    w = np.tile(0.5 * gl_weights, n)
    h = (n - 1) // 2
    s = np.sinc(f[:, None] - np.arange(-h, h + 1)[None, :])
    v = s.T @ (w[:, None] * s)
    return (v + v.T) / 2.0


def compute_gram(grid, nodes_per_unit=128):
    """GramPair for the grid. W is the identity (analytic); V by quadrature."""
    if nodes_per_unit < 64:
        raise ValueError("need at least 64 quadrature nodes per unit interval")
    n = grid.n_subcarriers
    v = _sinc_band_overlap_matrix(n, nodes_per_unit)
    return GramPair(V=v, W=np.eye(n))


def energies(x, gram):
    """(in-band, total) energy of a symbol vector: x^H V x and x^H W x."""
    x = np.asarray(x)
    if x.shape[-1] != gram.V.shape[0]:
        raise ValueError("symbol vector / Gram matrix dimension mismatch")
    e_in = np.real(np.einsum("...i,ij,...j->...", x.conj(), gram.V, x))
    e_tot = np.real(np.einsum("...i,...i->...", x.conj(), x))
    return e_in, e_tot


def aclr(batch, gram):
    """Adjacent channel leakage ratio of a batch of symbol vectors (linear).

    Sample-mean estimator: sum(x^H W x) / sum(x^H V x) - 1.
    """
    x = np.atleast_2d(np.asarray(batch))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    e_in, e_tot = energies(x, gram)
    denom = e_in.sum()
    if denom <= 0:
        raise ValueError("zero in-band energy")
    return e_tot.sum() / denom - 1.0


def _pooled_normalized_power(batch):
    z = np.atleast_2d(np.asarray(batch))
    p = np.abs(z) ** 2
    mean = p.mean()
    if mean <= 0:
        raise ValueError("zero-power batch")
    return (p / mean).ravel()


def papr_epsilon(batch, epsilon):
    """PAPR at exceedance probability epsilon, in dB.

    Pools all instantaneous powers of the batch, normalizes by the batch mean
    power, and returns the smallest pooled value e such that at most
    epsilon * M samples are strictly greater than e.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    p = np.sort(_pooled_normalized_power(batch))
    m = p.size
    if m < 10 / epsilon:
        warnings.warn(
            f"only {m} pooled samples for epsilon={epsilon}; "
            "quantile estimate unreliable",
            stacklevel=2,
        )
    allowed = int(np.floor(epsilon * m))
    idx = max(0, m - allowed - 1)
    return db(p[idx])


@dataclass(frozen=True)
class CcdfCurve:
    thresholds: np.ndarray
    probabilities: np.ndarray

    def to_csv(self, path, header="threshold,probability"):
        _write_curve_csv(path, header, self.thresholds, self.probabilities)


@dataclass(frozen=True)
class PsdCurve:
    freqs: np.ndarray
    density: np.ndarray

    def to_csv(self, path, header="freq,density"):
        _write_curve_csv(path, header, self.freqs, self.density)


def _write_curve_csv(path, header, xs, ys):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for x, y in zip(xs, ys):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def ccdf_power(batch, thresholds):
    """Empirical CCDF of pooled normalized instantaneous power."""
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    p = np.sort(_pooled_normalized_power(batch))
    m = p.size
    # count of samples strictly above each threshold
    probs = (m - np.searchsorted(p, thresholds, side="right")) / m
    return CcdfCurve(thresholds=thresholds, probabilities=probs)


def psd_band_ratio(curve, n_subcarriers):
    """Out-of-band to in-band energy ratio of a PsdCurve (linear).

    The two out-of-band tails are integrated separately so the gap across the
    in-band interval contributes nothing.
    """
    f, d = curve.freqs, curve.density
    half = n_subcarriers / 2.0
    inband = np.abs(f) <= half
    left = f < -half
    right = f > half
    e_in = np.trapezoid(d[inband], f[inband])
    e_out = np.trapezoid(d[left], f[left]) + np.trapezoid(d[right], f[right])
    return e_out / e_in


def psd_estimate(batch, grid, view_oversampling=4, points_per_subcarrier=4):
    """Batch-averaged periodogram of the continuous baseband spectrum.

    Evaluates |sum_n x_n sinc(f - n)|^2 on a frequency grid spanning
    +/- N*view/2 subcarrier spacings (wide enough for the adjacent channels)
    and normalizes so the in-band average density is 1 (0 dB).
    """
    x = np.atleast_2d(np.asarray(batch))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if view_oversampling < 4:
        raise ValueError("view_oversampling must be >= 4")
    n = grid.n_subcarriers
    fmax = n * view_oversampling / 2.0
    half = int(round(fmax * points_per_subcarrier))
    f = np.arange(-half, half + 1) / points_per_subcarrier
    s = np.sinc(f[:, None] - grid.indices[None, :])
    spectra = x @ s.T
    density = np.mean(np.abs(spectra) ** 2, axis=0)
    inband = np.abs(f) <= n / 2.0
    scale = density[inband].mean()
    if scale <= 0:
        raise ValueError("zero in-band density")
    return PsdCurve(freqs=f, density=density / scale)
