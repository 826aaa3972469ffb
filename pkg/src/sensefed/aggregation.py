"""Server-side receive combining and its exact error expression.

At interval t the server observes y[t] = sum_k H_k x_k[t] + z[t] with
z ~ CN(0, sigma2 I_N) and recovers the I task streams through a combiner
M[t] (N x I): r[t] = M[t]^H y[t]. For unit-variance task symbols the
mean-square deviation from the weighted targets has the closed form

    mse(t) = sum_k || M[t]^H H_k C_k p_k[t] - W_k ||_F^2
             + sigma2 * || M[t] ||_F^2,

which is quadratic in M[t]; its unique stationary point is

    M*[t] = (sum_k H_k C_k C_k^H H_k^H + sigma2 I)^{-1}
            sum_k p_k[t] H_k C_k W_k^H.

The pulse sample enters unconjugated, which is what stationarity of the
quadratic demands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParameterError
from .signaling import AggregationWeights, PrecoderSet, PulseBook


@dataclass(frozen=True)
class ReceiverSet:
    """Per-interval receive combiners for one frame."""

    Mrx: np.ndarray  # (T, N, I)

    def __post_init__(self):
        m = np.asarray(self.Mrx)
        if m.ndim != 3:
            raise ContractViolation(f"receivers must be (T, N, I), got {m.shape}")
        if not np.all(np.isfinite(m.view(float))):
            raise ContractViolation("receivers contain non-finite entries")

    @property
    def n_intervals(self) -> int:
        return self.Mrx.shape[0]


def as_receiver_array(receivers) -> np.ndarray:
    """Unwrap a ReceiverSet or pass a raw (T, N, I) array through."""
    return receivers.Mrx if isinstance(receivers, ReceiverSet) else np.asarray(receivers)


def ps_receive(x_all: np.ndarray, channels: np.ndarray, rng, sigma2: float) -> np.ndarray:
    """Superimpose every device's transmit vector through its channel, plus noise.

    x_all: (K, M) transmit vectors for this interval; channels: (K, N, M).
    Noise is CN(0, sigma2 I_N): per complex entry E|z|^2 = sigma2.
    """
    x_all = np.asarray(x_all)
    channels = np.asarray(channels)
    if x_all.shape[0] != channels.shape[0] or x_all.shape[1] != channels.shape[2]:
        raise ContractViolation(f"signals {x_all.shape} and channels {channels.shape} are incompatible")
    if sigma2 < 0:
        raise ParameterError("sigma2 must be nonnegative")
    y = np.einsum("knm,km->n", channels, x_all)
    if sigma2 > 0:
        rng = np.random.default_rng(rng)
        n_rx = channels.shape[1]
        z = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx))
        y = y + z
    return y


def apply_receiver(receiver: np.ndarray, y: np.ndarray) -> np.ndarray:
    """r = M^H y: project the antenna observation onto the task streams."""
    receiver = np.asarray(receiver)
    y = np.asarray(y)
    if receiver.ndim != 2 or y.shape != (receiver.shape[0],):
        raise ContractViolation(f"receiver {receiver.shape} and observation {y.shape} are incompatible")
    return np.conj(receiver).T @ y


def _effective_links(precoders: PrecoderSet, channels: np.ndarray) -> np.ndarray:
    """H_k C_k for every device, shape (K, N, I)."""
    return np.einsum("knm,kmi->kni", channels, precoders.C)


def aggregation_mse(receiver: np.ndarray, precoders: PrecoderSet, channels: np.ndarray,
                    weights: AggregationWeights, pulse_samples: np.ndarray,
                    sigma2: float) -> float:
    """Closed-form error of one interval's combiner against the weighted targets."""
    receiver = np.asarray(receiver)
    links = _effective_links(precoders, channels)  # (K, N, I)
    resid = np.einsum("ni,knj->kij", np.conj(receiver), links)  # M^H H_k C_k, (K, I, I)
    resid = resid * np.asarray(pulse_samples)[:, None, None]
    for k in range(weights.n_devices):
        resid[k] -= weights.matrix(k)
    return float(np.sum(np.abs(resid) ** 2) + sigma2 * np.sum(np.abs(receiver) ** 2))


def time_avg_mse(receivers, precoders: PrecoderSet, channels: np.ndarray,
                 weights: AggregationWeights, pulses: PulseBook, sigma2: float) -> float:
    """Average of the per-interval closed-form error over the pulse frame."""
    receivers = as_receiver_array(receivers)
    t_len = pulses.length
    if receivers.shape[0] != t_len:
        raise ContractViolation(f"need one receiver per interval: {receivers.shape[0]} != {t_len}")
    links = _effective_links(precoders, channels)  # (K, N, I)
    # M[t]^H H_k C_k p_k[t] for all t, k at once: (T, K, I, I)
    prods = np.einsum("tni,knj,kt->tkij", np.conj(receivers), links, pulses.pulses)
    w_mats = np.stack([weights.matrix(k) for k in range(weights.n_devices)])  # (K, I, I)
    resid = prods - w_mats[None]
    per_t = np.sum(np.abs(resid) ** 2, axis=(1, 2, 3)) + sigma2 * np.sum(np.abs(receivers) ** 2, axis=(1, 2))
    return float(np.mean(per_t))


def optimal_receiver(precoders: PrecoderSet, channels: np.ndarray,
                     weights: AggregationWeights, pulse_samples: np.ndarray,
                     sigma2: float) -> np.ndarray:
    """Minimizer of the interval's quadratic error, shape (N, I)."""
    return optimal_receivers(precoders, channels, weights,
                             np.asarray(pulse_samples)[:, None], sigma2)[0]


def optimal_receivers(precoders: PrecoderSet, channels: np.ndarray,
                      weights: AggregationWeights, pulses, sigma2: float) -> np.ndarray:
    """Batched optimal combiners for a whole frame, shape (T, N, I).

    The Gram matrix sum_k H_k C_k C_k^H H_k^H + sigma2 I is shared across
    intervals; only the pulse-weighted right-hand side varies with t.
    """
    if isinstance(pulses, PulseBook):
        pulse_arr = pulses.pulses
    else:
        pulse_arr = np.asarray(pulses)
    if pulse_arr.ndim != 2 or pulse_arr.shape[0] != precoders.n_devices:
        raise ContractViolation(f"pulses must be (K, T), got {pulse_arr.shape}")
    n_rx = channels.shape[1]
    links = _effective_links(precoders, channels)  # (K, N, I)
    gram = np.einsum("kni,kpi->np", links, np.conj(links)) + sigma2 * np.eye(n_rx)
    if sigma2 == 0 and np.linalg.matrix_rank(gram, hermitian=True) < n_rx:
        raise ParameterError("receiver Gram matrix is singular; a positive sigma2 is required")
    w_mats = np.stack([weights.matrix(k) for k in range(weights.n_devices)])  # (K, I, I)
    d = np.einsum("kni,kij->knj", links, np.conj(w_mats).transpose(0, 2, 1))  # H_k C_k W_k^H
    rhs = np.einsum("kt,knj->tnj", pulse_arr, d)  # (T, N, I)
    t_len, _, n_tasks = rhs.shape
    try:
        sol = np.linalg.solve(gram, rhs.transpose(1, 0, 2).reshape(n_rx, t_len * n_tasks))
    except np.linalg.LinAlgError as exc:
        raise ParameterError("receiver Gram matrix is singular; a positive sigma2 is required") from exc
    return sol.reshape(n_rx, t_len, n_tasks).transpose(1, 0, 2)


def aggregation_mse_mc(receiver: np.ndarray, precoders: PrecoderSet, channels: np.ndarray,
                       weights: AggregationWeights, pulse_samples: np.ndarray, sigma2: float,
                       n_samples: int, rng) -> float:
    """Monte-Carlo estimate of the same interval error, for validation.

    Task symbols are drawn real, zero mean, unit variance, matching how
    standardized blocks are transmitted.
    """
    rng = np.random.default_rng(rng)
    receiver = np.asarray(receiver)
    n_dev, n_tasks = precoders.n_devices, precoders.n_tasks
    n_rx = channels.shape[1]
    g = rng.standard_normal((n_dev, n_tasks, n_samples))
    x = np.einsum("kmi,kis->kms", precoders.C, g) * np.asarray(pulse_samples)[:, None, None]
    y = np.einsum("knm,kms->ns", channels, x)
    if sigma2 > 0:
        y = y + np.sqrt(sigma2 / 2.0) * (rng.standard_normal((n_rx, n_samples))
                                         + 1j * rng.standard_normal((n_rx, n_samples)))
    r = np.conj(receiver).T @ y  # (I, S)
    target = np.einsum("ki,kis->is", weights.w, g)
    return float(np.mean(np.sum(np.abs(r - target) ** 2, axis=0)))
