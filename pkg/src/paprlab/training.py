"""End-to-end training of the neural transmitter/receiver pair.

The rate objective (binary cross-entropy), the peak-power hinge and the
leakage-ratio constraint are combined into an augmented Lagrangian whose
multipliers and penalties follow the outer-iteration schedule: S optimizer
steps, then a multiplier update on a fresh batch, then geometric penalty
growth by (1 + tau).
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Adam, Tensor
from .waveform import build_grid, compute_gram, db, from_db, idft_matrix

LN2 = np.log(2.0)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, message, log_rows):
        super().__init__(message)
        self.log_rows = log_rows


@dataclass
class ConstraintState:
    """Lagrange multipliers and penalty parameters of the outer loop."""

    lambda_p: float = 0.0
    lambda_l: float = 0.0
    mu_p: float = 0.1
    mu_l: float = 0.001
    tau: float = 0.004
    iteration: int = 0

    def __post_init__(self):
        if self.mu_p <= 0 or self.mu_l <= 0:
            raise ValueError("penalty parameters must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def update(self, l_peak, l_leak):
        """One multiplier/penalty update given fresh constraint estimates."""
        self.lambda_p = self.lambda_p + self.mu_p * l_peak
        self.lambda_l = max(0.0, self.lambda_l + self.mu_l * l_leak)
        self.mu_p = (1.0 + self.tau) * self.mu_p
        self.mu_l = (1.0 + self.tau) * self.mu_l
        self.iteration += 1


@dataclass(frozen=True)
class TrainTargets:
    """Peak power and leakage targets, configured in dB."""

    gamma_peak_db: float
    beta_leak_db: float

    @property
    def gamma_peak(self):
        g = from_db(self.gamma_peak_db)
        if g <= 1.0:
            raise ValueError("peak target must exceed 0 dB for non-constant signals")
        return g

    @property
    def beta_leak(self):
        return from_db(self.beta_leak_db)


def normalize_batch(x, n_subcarriers):
    """Scale a (B, N, 2) batch so the mean energy per OFDM symbol is N.

    Divides by sqrt(sum(x^2) / (N * B)); gradient flows through the divisor.
    """
    batch = x.shape[0]
    energy = (x**2).sum()
    if float(energy.data) <= 0.0:
        raise ValueError("zero-energy batch cannot be normalized")
    divisor = (energy / float(n_subcarriers * batch)).sqrt()
    return x / divisor, float(divisor.data)


class NeuralTransmitter(nn.Module):
    """Bit matrix (B, N, K) -> normalized frequency symbols (B, N, 2)."""

    def __init__(self, n_subcarriers, k_bits, hidden, blocks=nn.DEFAULT_BLOCKS, rng=None):
        super().__init__()
        self.n_subcarriers = n_subcarriers
        self.k_bits = k_bits
        self.stack = self.add_child("stack", nn.ConvStack(k_bits, 2, hidden, blocks, rng))
        self.running_norm = np.ones(1)
        self._norm_seen = False

    def forward(self, bits, train):
        if bits.shape[1] != self.n_subcarriers or bits.shape[2] != self.k_bits:
            raise ValueError(
                f"expected bits of shape (B, {self.n_subcarriers}, {self.k_bits})"
            )
        raw = self.stack.forward(bits, train)
        if train:
            out, divisor = normalize_batch(raw, self.n_subcarriers)
            m = 0.99 if self._norm_seen else 0.0
            self._norm_seen = True
            self.running_norm[0] = m * self.running_norm[0] + (1 - m) * divisor
            return out
        # inference: frozen scalar so symbols do not depend on batch peers
        return raw / float(self.running_norm[0])

    def state_arrays(self):
        out = super().state_arrays()
        out["running_norm"] = self.running_norm
        return out


class NeuralReceiver(nn.Module):
    """Received symbols (B, N, 2) -> per-bit LLRs (B, N, K)."""

    def __init__(self, n_subcarriers, k_bits, hidden, blocks=nn.DEFAULT_BLOCKS, rng=None):
        super().__init__()
        self.n_subcarriers = n_subcarriers
        self.k_bits = k_bits
        self.stack = self.add_child("stack", nn.ConvStack(2, k_bits, hidden, blocks, rng))

    def forward(self, y, train):
        if y.shape[1] != self.n_subcarriers or y.shape[2] != 2:
            raise ValueError(f"expected symbols of shape (B, {self.n_subcarriers}, 2)")
        return self.stack.forward(y, train)


def loss_bce(llrs, bits):
    """Total binary cross-entropy in bits, averaged over batch and subcarrier
    and summed over the K bit positions. The rate estimate is K - loss."""
    if llrs.shape != np.shape(bits):
        raise ValueError("llrs/bits shape mismatch")
    sign = 2.0 * np.asarray(bits, dtype=llrs.data.dtype) - 1.0
    batch, n, _ = llrs.shape
    per_bit = (llrs * (-sign)).softplus()
    return per_bit.sum() / float(batch * n * LN2)


def loss_papr(x, time_transform, gamma_peak):
    """Riemann-sum hinge penalty on normalized instantaneous power.

    x is a (B, N, 2) symbol tensor; time_transform the (real, imag) parts of
    the oversampled IDFT matrix. Instantaneous powers are normalized so the
    batch average power is 1 before thresholding at gamma_peak (linear).
    """
    a_re, a_im = time_transform
    x_re, x_im = x[:, :, 0], x[:, :, 1]
    z_re = x_re.matmul(a_re.T) - x_im.matmul(a_im.T)
    z_im = x_re.matmul(a_im.T) + x_im.matmul(a_re.T)
    p = z_re**2 + z_im**2
    p_norm = p / p.mean()
    batch, m = p.shape
    return (p_norm - gamma_peak).relu().sum() / float(batch * m)


def loss_aclr(x, v_matrix, beta_leak):
    """Leakage constraint: total over in-band batch energy, minus 1, minus
    the linear target. Negative when the constraint is satisfied."""
    x_re, x_im = x[:, :, 0], x[:, :, 1]
    total = (x**2).sum()
    inband = (x_re.matmul(v_matrix) * x_re).sum() + (x_im.matmul(v_matrix) * x_im).sum()
    if float(inband.data) <= 0.0:
        raise ValueError("zero in-band energy")
    return total / inband - 1.0 - beta_leak


def augmented_lagrangian(bce, l_papr, l_aclr, state):
    """Scalar training objective combining the three terms."""
    if state.mu_p <= 0 or state.mu_l <= 0:
        raise ValueError("penalty parameters must be positive")
    peak_terms = l_papr * state.lambda_p + (l_papr**2) * (0.5 * state.mu_p)
    leak_inner = (l_aclr * state.mu_l + state.lambda_l).relu()
    leak_terms = (leak_inner**2 - state.lambda_l**2) * (0.5 / state.mu_l)
    return bce + peak_terms + leak_terms


@dataclass(frozen=True)
class TrainConfig:
    n_subcarriers: int = 75
    oversampling: int = 5
    k_bits: int = 4
    hidden: int = 32
    snr_db: float = 10.0
    gamma_peak_db: float = 6.0
    beta_leak_db: float = -20.0
    batch_size: int = 256
    outer_iters: int = 400
    inner_steps: int = 15
    learning_rate: float = 1e-3
    tau: float = 0.004
    mu_p0: float = 0.1
    mu_l0: float = 0.001
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 50
    out_dir: str | None = None

    @property
    def targets(self):
        return TrainTargets(self.gamma_peak_db, self.beta_leak_db)


@dataclass
class TrainResult:
    tx: NeuralTransmitter
    rx: NeuralReceiver
    state: ConstraintState
    log_rows: list
    config: TrainConfig


def _cast_module(module, dtype):
    for p in module.parameters():
        p.data = p.data.astype(dtype)


def _write_log(path, rows):
    fields = [
        "iteration", "bce", "l_peak", "l_leak",
        "lambda_p", "lambda_l", "mu_p", "mu_l", "rate_estimate",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _checkpoint(config, tx, rx, state, tag):
    if config.out_dir is None:
        return
    os.makedirs(config.out_dir, exist_ok=True)
    extra = {
        "constraint": np.array(
            [state.lambda_p, state.lambda_l, state.mu_p, state.mu_l, state.iteration]
        )
    }
    nn.save_checkpoint(os.path.join(config.out_dir, f"tx_{tag}.npz"), tx, extra)
    nn.save_checkpoint(os.path.join(config.out_dir, f"rx_{tag}.npz"), rx)


def train(config):
    """Run the constrained training loop; returns models, state and the log."""
    dtype = np.dtype(config.dtype)
    grid = build_grid(config.n_subcarriers, config.oversampling)
    gram = compute_gram(grid)
    v_matrix = gram.V.astype(dtype)
    u = idft_matrix(grid)
    time_transform = (u.real.astype(dtype), u.imag.astype(dtype))

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_bits = np.random.default_rng(seeds[1])
    rng_noise = np.random.default_rng(seeds[2])

    tx = NeuralTransmitter(config.n_subcarriers, config.k_bits, config.hidden, rng=rng_init)
    rx = NeuralReceiver(config.n_subcarriers, config.k_bits, config.hidden, rng=rng_init)
    _cast_module(tx, dtype)
    _cast_module(rx, dtype)
    params = list(tx.parameters()) + list(rx.parameters())
    optimizer = Adam(params, lr=config.learning_rate)
    state = ConstraintState(mu_p=config.mu_p0, mu_l=config.mu_l0, tau=config.tau)

    gamma = config.targets.gamma_peak
    beta = config.targets.beta_leak
    noise_scale = np.sqrt(from_db(-config.snr_db) / 2.0)

    def sample_batch():
        bits = rng_bits.integers(
            0, 2, size=(config.batch_size, config.n_subcarriers, config.k_bits)
        )
        noise = (
            noise_scale
            * rng_noise.standard_normal((config.batch_size, config.n_subcarriers, 2))
        ).astype(dtype)
        return bits, noise

    def forward_losses(bits, noise, train_mode):
        x = tx.forward(Tensor(bits.astype(dtype)), train_mode)
        y = x + Tensor(noise)
        llrs = rx.forward(y, train_mode)
        return (
            loss_bce(llrs, bits),
            loss_papr(x, time_transform, gamma),
            loss_aclr(x, v_matrix, beta),
        )

    log_rows = []
    for iteration in range(config.outer_iters):
        last_bce = None
        for _ in range(config.inner_steps):
            bits, noise = sample_batch()
            bce, l_p, l_l = forward_losses(bits, noise, train_mode=True)
            lagrangian = augmented_lagrangian(bce, l_p, l_l, state)
            if not np.isfinite(lagrangian.data):
                _write_failure_log(config, log_rows)
                raise TrainingDiverged(
                    f"non-finite loss at outer iteration {iteration}", log_rows
                )
            optimizer.zero_grad()
            lagrangian.backward()
            optimizer.step()
            last_bce = float(bce.data)

        # multiplier update on a fresh held-out batch
        bits, noise = sample_batch()
        bce, l_p, l_l = forward_losses(bits, noise, train_mode=True)
        l_peak, l_leak = float(l_p.data), float(l_l.data)
        row = {
            "iteration": iteration,
            "bce": last_bce,
            "l_peak": l_peak,
            "l_leak": l_leak,
            "lambda_p": state.lambda_p,
            "lambda_l": state.lambda_l,
            "mu_p": state.mu_p,
            "mu_l": state.mu_l,
            "rate_estimate": config.k_bits - float(bce.data),
        }
        log_rows.append(row)
        state.update(l_peak, l_leak)

        if config.out_dir is not None and (
            (iteration + 1) % config.checkpoint_every == 0
        ):
            _checkpoint(config, tx, rx, state, f"iter{iteration + 1:05d}")

    _checkpoint(config, tx, rx, state, "final")
    if config.out_dir is not None:
        _write_log(os.path.join(config.out_dir, "training_log.csv"), log_rows)
    return TrainResult(tx=tx, rx=rx, state=state, log_rows=log_rows, config=config)


def _write_failure_log(config, log_rows):
    if config.out_dir is not None:
        os.makedirs(config.out_dir, exist_ok=True)
        _write_log(os.path.join(config.out_dir, "training_log_diverged.csv"), log_rows)


def transmit(tx, bits):
    """Inference-mode transmit: bit array (B, N, K) -> complex symbols (B, N)."""
    out = tx.forward(Tensor(np.asarray(bits, dtype=float)), train=False).data
    return out[..., 0] + 1j * out[..., 1]


def evaluate(result, n_batches=16, epsilon=1e-3, seed=1_000_003):
    """Measure rate, PAPR and ACLR of a trained system in inference mode."""
    from .waveform import aclr as measure_aclr
    from .waveform import papr_epsilon, to_time

    config = result.config
    grid = build_grid(config.n_subcarriers, config.oversampling)
    gram = compute_gram(grid)
    rng = np.random.default_rng(seed)
    noise_scale = np.sqrt(from_db(-config.snr_db) / 2.0)

    symbols = []
    total_bce = 0.0
    for _ in range(n_batches):
        bits = rng.integers(
            0, 2, size=(config.batch_size, config.n_subcarriers, config.k_bits)
        )
        x = transmit(result.tx, bits)
        symbols.append(x)
        noise = noise_scale * rng.standard_normal(x.shape + (2,))
        y = np.stack([x.real + noise[..., 0], x.imag + noise[..., 1]], axis=-1)
        llrs = result.rx.forward(Tensor(y.astype(result.tx.stack.entry.bias.dtype)), False)
        total_bce += float(loss_bce(llrs, bits).data)

    x_all = np.concatenate(symbols, axis=0)
    z = to_time(x_all, grid)
    return {
        "rate": config.k_bits - total_bce / n_batches,
        "papr_db": papr_epsilon(z, epsilon),
        "aclr_db": db(measure_aclr(x_all, gram)),
        "symbols": x_all,
    }
