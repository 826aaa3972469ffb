"""Transmit-side signal construction.

Each device carries I task streams through a precoder C_k (M x I,
||C_k||_F^2 <= P) and spreads the resulting antenna vector with a
unit-modulus pulse sequence that is orthogonal across devices:

    s_k[t] = C_k g_k[t],      x_k[t] = s_k[t] * p_k[t],
    sum_t conj(p_k[t]) p_l[t] = 0   for k != l.

Task entries g are standardized per device and per block (zero mean, unit
variance) before transmission; the statistics travel over an error-free
control channel so the server can undo the scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractViolation, ParameterError

UNIT_MODULUS_TOL = 1e-9
# Empirical scales below this make a block degenerate: it is sent as zeros.
DEGENERATE_SCALE = 1e-12


@dataclass(frozen=True)
class PulseBook:
    """Per-device pulse sequences, rows indexed by device: (K, T)."""

    pulses: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pulses, dtype=complex)
        if p.ndim != 2:
            raise ParameterError(f"pulse book must be 2-D (K, T), got shape {p.shape}")
        if np.max(np.abs(np.abs(p) - 1.0)) > UNIT_MODULUS_TOL:
            raise ContractViolation("pulse entries must be unit modulus")
        object.__setattr__(self, "pulses", p)

    @property
    def n_devices(self) -> int:
        return self.pulses.shape[0]

    @property
    def length(self) -> int:
        return self.pulses.shape[1]

    def cross_correlations(self) -> np.ndarray:
        """Gram matrix sum_t conj(p_k[t]) p_l[t], shape (K, K)."""
        return np.conj(self.pulses) @ self.pulses.T


def dft_pulses(n_devices: int, length: int) -> PulseBook:
    """First K rows of the T x T DFT matrix, entries exp(-j 2 pi k t / T)."""
    if length < n_devices:
        raise ParameterError(f"pulse length {length} must be >= number of devices {n_devices}")
    k = np.arange(n_devices)[:, None]
    t = np.arange(length)[None, :]
    return PulseBook(pulses=np.exp(-2j * np.pi * k * t / length))


def hadamard_pulses(n_devices: int, length: int) -> PulseBook:
    """First K rows of the Walsh-Hadamard matrix; length must be a power of two."""
    if length < n_devices:
        raise ParameterError(f"pulse length {length} must be >= number of devices {n_devices}")
    if length & (length - 1) != 0:
        raise ParameterError(f"Hadamard pulse length must be a power of two, got {length}")
    h = scipy.linalg.hadamard(length).astype(complex)
    return PulseBook(pulses=h[:n_devices])


@dataclass(frozen=True)
class BlockStats:
    """Standardization statistics for one per-device, per-task block."""

    mean: float
    scale: float
    degenerate: bool = False


def standardize(values) -> tuple[np.ndarray, BlockStats]:
    """Center and scale one block to zero mean and unit variance.

    A block whose empirical scale vanishes (constant entries) is degenerate:
    it is replaced by zeros and flagged, and de-standardization restores the
    constant from the mean alone.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ParameterError(f"standardize needs a 1-D block of >= 2 values, got shape {arr.shape}")
    mean = float(np.mean(arr))
    scale = float(np.std(arr))
    if scale < DEGENERATE_SCALE:
        return np.zeros_like(arr), BlockStats(mean=mean, scale=0.0, degenerate=True)
    return (arr - mean) / scale, BlockStats(mean=mean, scale=scale)


def destandardize(values, stats: BlockStats) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if stats.degenerate:
        return np.full_like(arr, stats.mean)
    return arr * stats.scale + stats.mean


@dataclass(frozen=True)
class PrecoderSet:
    """Per-device precoders stacked as (K, M, I), checked against the budget."""

    C: np.ndarray
    power_budget: float

    def __post_init__(self):
        c = np.asarray(self.C, dtype=complex)
        if c.ndim != 3:
            raise ParameterError(f"precoders must be (K, M, I), got shape {c.shape}")
        if self.power_budget <= 0:
            raise ParameterError("power budget must be positive")
        if np.max(self.energies_of(c)) > self.power_budget * (1 + 1e-6):
            raise ContractViolation("a precoder exceeds the per-device power budget")
        object.__setattr__(self, "C", c)

    @staticmethod
    def energies_of(c: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(c) ** 2, axis=(1, 2)).real

    @property
    def energies(self) -> np.ndarray:
        """||C_k||_F^2 per device, shape (K,)."""
        return self.energies_of(self.C)

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.energies))

    @property
    def n_devices(self) -> int:
        return self.C.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.C.shape[2]

    def gram(self, k: int) -> np.ndarray:
        """C_k C_k^H, shape (M, M)."""
        return self.C[k] @ np.conj(self.C[k]).T


def random_precoders(rng_seed, n_devices: int, m_antennas: int, n_tasks: int,
                     power_budget: float) -> PrecoderSet:
    """Full-power start: sqrt(P/I) times the first I columns of a random unitary."""
    if n_tasks > m_antennas:
        raise ParameterError(f"n_tasks {n_tasks} cannot exceed m_antennas {m_antennas}")
    rng = np.random.default_rng(rng_seed)
    c = np.empty((n_devices, m_antennas, n_tasks), dtype=complex)
    for k in range(n_devices):
        z = rng.standard_normal((m_antennas, m_antennas)) + 1j * rng.standard_normal((m_antennas, m_antennas))
        q, r = np.linalg.qr(z)
        q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))  # fix QR phase ambiguity
        c[k] = q[:, :n_tasks] * np.sqrt(power_budget / n_tasks)
    return PrecoderSet(C=c, power_budget=power_budget)


@dataclass(frozen=True)
class AggregationWeights:
    """Per-device diagonal combining targets, stacked as (K, I) real."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2:
            raise ParameterError(f"weights must be (K, I), got shape {w.shape}")
        object.__setattr__(self, "w", w)

    @property
    def n_devices(self) -> int:
        return self.w.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.w.shape[1]

    def matrix(self, k: int) -> np.ndarray:
        """W_k = diag(w_k^1 .. w_k^I)."""
        return np.diag(self.w[k])

    @property
    def total_sq_norm(self) -> float:
        return float(np.sum(self.w**2))


def make_weights(n_devices: int, sample_counts=None, sensing: bool = True,
                 learning: bool = True) -> AggregationWeights:
    """Standard targets: weight 1 for the sensing stream, n_k / sum(n) for learning."""
    cols = []
    if sensing:
        cols.append(np.ones(n_devices))
    if learning:
        if sample_counts is None:
            cols.append(np.full(n_devices, 1.0 / n_devices))
        else:
            n = np.asarray(sample_counts, dtype=float)
            if n.shape != (n_devices,) or np.any(n <= 0):
                raise ParameterError("sample_counts must be positive, one per device")
            cols.append(n / np.sum(n))
    if not cols:
        raise ParameterError("at least one task stream is required")
    return AggregationWeights(w=np.stack(cols, axis=1))


def encode_symbol(precoder: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Antenna vector s = C g for one device and interval."""
    c = np.asarray(precoder)
    g = np.asarray(g)
    if c.ndim != 2 or g.shape != (c.shape[1],):
        raise ContractViolation(f"precoder {c.shape} and symbol {g.shape} are incompatible")
    return c @ g


def transmit_signal(s: np.ndarray, pulse: complex) -> np.ndarray:
    """Apply the interval's pulse sample: x = s * p, |p| = 1."""
    if abs(abs(pulse) - 1.0) > UNIT_MODULUS_TOL:
        raise ContractViolation(f"pulse sample must be unit modulus, got |p| = {abs(pulse)}")
    return np.asarray(s) * pulse
