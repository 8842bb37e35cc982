"""16-QAM + tone-reservation benchmark.

Gray-labeled 16-QAM on the data tones, AWGN channel, exact log-MAP soft
demapping, uniformly random peak-reduction-tone (PRT) placement per
transmission, and an iterative minimax solver for the peak-canceling signal.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .waveform import build_grid, db, idft_matrix, to_time, aclr, papr_epsilon

LN2 = np.log(2.0)

# reflected Gray code on each axis: bits (b0,b1) -> amplitude level
_GRAY_LEVELS = np.array([-3.0, -1.0, 3.0, 1.0]) / np.sqrt(10.0)


@dataclass(frozen=True)
class QamConstellation:
    """16-QAM points with their 4-bit Gray labels (unit average energy)."""

    points: np.ndarray
    labels: np.ndarray

    @property
    def bits_per_symbol(self):
        return self.labels.shape[1]


def qam16_constellation():
    labels = np.array(
        [[(i >> (3 - k)) & 1 for k in range(4)] for i in range(16)], dtype=np.int8
    )
    i_level = _GRAY_LEVELS[labels[:, 0] * 2 + labels[:, 1]]
    q_level = _GRAY_LEVELS[labels[:, 2] * 2 + labels[:, 3]]
    return QamConstellation(points=i_level + 1j * q_level, labels=labels)


@dataclass(frozen=True)
class PrtAllocation:
    """Partition of the N grid positions into reserved (PRT) and data tones."""

    reserved: np.ndarray
    data: np.ndarray
    n_subcarriers: int

    @property
    def n_reserved(self):
        return self.reserved.size

    @property
    def n_data(self):
        return self.data.size


def sample_prt(grid, n_reserved, rng):
    """Uniformly random PRT placement, fresh per transmission."""
    n = grid.n_subcarriers
    if not 0 <= n_reserved <= n:
        raise ValueError(f"PRT count {n_reserved} out of range [0, {n}]")
    reserved = np.sort(rng.choice(n, size=n_reserved, replace=False))
    mask = np.ones(n, dtype=bool)
    mask[reserved] = False
    return PrtAllocation(
        reserved=reserved, data=np.flatnonzero(mask), n_subcarriers=n
    )


def qam16_map(bits, alloc, constellation=None):
    """Map 4-bit groups onto the data tones; reserved tones are zero.

    bits has shape (..., D, 4) with D = alloc.n_data; returns (..., N).
    """
    if constellation is None:
        constellation = qam16_constellation()
    bits = np.asarray(bits)
    if bits.shape[-2:] != (alloc.n_data, 4):
        raise ValueError(
            f"expected bits of shape (..., {alloc.n_data}, 4), got {bits.shape}"
        )
    idx = (
        bits[..., 0] * 8 + bits[..., 1] * 4 + bits[..., 2] * 2 + bits[..., 3]
    ).astype(int)
    x = np.zeros(bits.shape[:-2] + (alloc.n_subcarriers,), dtype=complex)
    x[..., alloc.data] = constellation.points[idx]
    return x


def awgn_channel(x, snr_db, rng):
    """y = x + n with circularly-symmetric noise, variance 10^(-snr/10)."""
    x = np.asarray(x)
    if np.isinf(snr_db):
        return x.copy()
    sigma2 = 10.0 ** (-snr_db / 10.0)
    n = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + np.sqrt(sigma2 / 2.0) * n


def awgn_llr_demap(y, noise_var, constellation=None):
    """Exact log-MAP bit LLRs, ln P(b=1|y) - ln P(b=0|y), shape (..., 4)."""
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    if constellation is None:
        constellation = qam16_constellation()
    y = np.asarray(y)
    metric = -np.abs(y[..., None] - constellation.points) ** 2 / noise_var
    k = constellation.bits_per_symbol
    llrs = np.empty(y.shape + (k,))
    for bit in range(k):
        one = constellation.labels[:, bit] == 1
        llrs[..., bit] = logsumexp(metric[..., one], axis=-1) - logsumexp(
            metric[..., ~one], axis=-1
        )
    return llrs


def bce_from_llrs(llrs, bits):
    """Mean binary cross-entropy in bits per channel use (summed over the
    bit index, averaged over everything else)."""
    sign = 2.0 * np.asarray(bits) - 1.0
    per_bit = np.logaddexp(0.0, -sign * llrs) / LN2
    return per_bit.sum(axis=-1).mean()


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the smoothed-minimax peak reduction solver."""

    max_iters: int = 60
    step_rule: str = "backtracking"
    smoothing: float = 0.25
    tol: float = 1e-5
    n_temperatures: int = 6
    polish_iters: int = 60

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")


def _peak(z):
    return np.max(np.abs(z) ** 2)


def _lse_cost(z, temp):
    p = np.abs(z) ** 2
    return temp * logsumexp(p / temp)


def tr_minimize_peak(x, alloc, grid, cfg=None):
    """Peak-canceling signal on the reserved tones.

    Minimizes max_k |to_time(x + c)_k|^2 over c supported on the PRTs:
    log-sum-exp smoothing with a decreasing temperature schedule and
    backtracking gradient descent, then exact-max subgradient polishing.
    Returns (c, peak) with c a length-N vector, zero on the data tones.
    """
    if cfg is None:
        cfg = SolverConfig()
    x = np.asarray(x, dtype=complex)
    n = grid.n_subcarriers
    c_full = np.zeros(n, dtype=complex)
    z0 = to_time(x, grid)
    peak0 = _peak(z0)
    if alloc.n_reserved == 0 or peak0 == 0.0:
        return c_full, peak0

    u_r = idft_matrix(grid)[:, alloc.reserved]
    c = np.zeros(alloc.n_reserved, dtype=complex)
    best_c, best_peak = c.copy(), peak0

    temps = peak0 * cfg.smoothing * (0.25 ** np.arange(cfg.n_temperatures))
    step = 0.1
    for temp in temps:
        z = z0 + u_r @ c
        cost = _lse_cost(z, temp)
        for _ in range(cfg.max_iters):
            p = np.abs(z) ** 2
            w = np.exp((p - p.max()) / temp)
            w /= w.sum()
            grad = 2.0 * (u_r.conj().T @ (w * z))
            gnorm2 = np.sum(np.abs(grad) ** 2)
            if gnorm2 == 0.0:
                break
            # backtracking on the smoothed objective
            improved = False
            for _ in range(30):
                c_try = c - step * grad
                z_try = z0 + u_r @ c_try
                cost_try = _lse_cost(z_try, temp)
                if cost_try < cost:
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
            rel = (cost - cost_try) / max(cost, 1e-300)
            c, z, cost = c_try, z_try, cost_try
            step *= 1.5
            pk = _peak(z)
            if pk < best_peak:
                best_peak, best_c = pk, c.copy()
            if rel < cfg.tol:
                break

    # exact-max subgradient polishing from the best smoothed iterate
    c = best_c.copy()
    z = z0 + u_r @ c
    for j in range(cfg.polish_iters):
        p = np.abs(z) ** 2
        k_star = np.argmax(p)
        grad = 2.0 * u_r[k_star].conj() * z[k_star]
        gnorm2 = np.sum(np.abs(grad) ** 2)
        if gnorm2 == 0.0:
            break
        # Polyak-style step toward an optimistic target below the current peak
        target = 0.98 * best_peak
        step_j = max(p[k_star] - target, 0.0) / gnorm2 / (1.0 + 0.1 * j)
        if step_j == 0.0:
            break
        c = c - step_j * grad
        z = z0 + u_r @ c
        pk = _peak(z)
        if pk < best_peak:
            best_peak, best_c = pk, c.copy()

    c_full[alloc.reserved] = best_c
    return c_full, best_peak


@dataclass(frozen=True)
class BaselineConfig:
    n_subcarriers: int = 75
    oversampling: int = 5
    n_prt: int = 0
    snr_db: float = 10.0
    n_symbols: int = 1000
    epsilon: float = 1e-3
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)


@dataclass(frozen=True)
class BaselineResult:
    rate: float
    papr_db: float
    aclr_db: float
    composite: np.ndarray  # transmitted x + c, shape (n_symbols, N)


def baseline_rate(config, gram):
    """Monte-Carlo evaluation of the tone-reservation baseline.

    Rate is (D/N) * (K - BCE) over the data tones; PAPR and ACLR are
    measured on the transmitted composite x + c.
    """
    grid = build_grid(config.n_subcarriers, config.oversampling)
    rng = np.random.default_rng(config.seed)
    constellation = qam16_constellation()
    n = grid.n_subcarriers
    k = constellation.bits_per_symbol
    d = n - config.n_prt

    composite = np.empty((config.n_symbols, n), dtype=complex)
    total_bce = 0.0
    sigma2 = 10.0 ** (-config.snr_db / 10.0)
    for i in range(config.n_symbols):
        alloc = sample_prt(grid, config.n_prt, rng)
        bits = rng.integers(0, 2, size=(d, k))
        x = qam16_map(bits, alloc, constellation)
        c, _ = tr_minimize_peak(x, alloc, grid, config.solver)
        composite[i] = x + c
        if np.isinf(config.snr_db):
            continue  # perfect demapping limit, zero cross-entropy
        y = awgn_channel(x, config.snr_db, rng)
        llrs = awgn_llr_demap(y[alloc.data], sigma2, constellation)
        total_bce += bce_from_llrs(llrs, bits)

    bce = total_bce / config.n_symbols
    rate = (d / n) * (k - bce)
    z = to_time(composite, grid)
    return BaselineResult(
        rate=rate,
        papr_db=papr_epsilon(z, config.epsilon),
        aclr_db=db(aclr(composite, gram)),
        composite=composite,
    )
