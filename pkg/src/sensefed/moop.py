"""Joint design of transmit precoders and receive combiners.

The two error metrics pull the precoders in different directions: the
aggregation error wants them matched to the uplink channels, the sensing
bound wants total transmit energy as large as possible. The sensing ceiling
eps0 converts into a minimum total energy through

    eps = eps0 * T / (rho * varsigma_bar^2),    sum_k ||C_k||_F^2 >= 1/eps,

which is feasible iff 1/eps <= K * P. A block-coordinate loop alternates:

  M1: with precoders fixed, each interval's optimal combiner is closed form.
  M2: with combiners fixed, the signal-mismatch part of the error is an
      independent convex quadratic per device, minimized over the power ball
      ||C_k||_F^2 <= P by projected gradient descent with backtracking.
  Projection: per-device energies alpha are clipped to [0, P], lifted by
      equal shares on devices with headroom until the total meets 1/eps,
      then each C_k is rescaled so that ||C_k||_F^2 = alpha_k exactly.

The lift can only increase a device's energy, so it may trade a little
aggregation error for the sensing constraint; the loop tracks the full
aggregation objective and stops on relative stagnation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import ReceiverSet, as_receiver_array, optimal_receivers, time_avg_mse
from .errors import ContractViolation, InfeasibleError, ParameterError
from .signaling import AggregationWeights, PrecoderSet, PulseBook, random_precoders

FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class MoopConfig:
    """Solver knobs: the sensing ceiling, power budget, and loop limits."""

    epsilon0: float
    power_budget: float
    max_outer_iters: int = 50
    tol_rel: float = 1e-4
    max_inner_iters: int = 4000
    backtrack: float = 0.5
    kkt_tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon0 <= 0 or self.power_budget <= 0 or self.tol_rel <= 0:
            raise ParameterError("epsilon0, power_budget and tol_rel must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ParameterError("iteration caps must be >= 1")
        if not (0 < self.backtrack < 1):
            raise ParameterError("backtrack factor must lie in (0, 1)")


@dataclass(frozen=True)
class MoopSolution:
    precoders: PrecoderSet
    receivers: ReceiverSet
    mse: float
    crb_l: float
    iters: int
    objective_trace: tuple
    converged: bool
    kkt_residual: float


def epsilon_inverse(epsilon0: float, rho: float, frame_len: int,
                    varsigma_bar2: float) -> float:
    """Minimum total transmit energy implied by the sensing ceiling."""
    if epsilon0 <= 0 or rho <= 0 or frame_len < 1 or varsigma_bar2 <= 0:
        raise ParameterError("epsilon0, rho, frame_len and varsigma_bar2 must be positive")
    return rho * varsigma_bar2 / (epsilon0 * frame_len)


def check_energy_feasible(epsilon_inv: float, n_devices: int, power_budget: float) -> None:
    cap = n_devices * power_budget
    if epsilon_inv > cap * (1 + FEASIBILITY_SLACK):
        raise InfeasibleError(
            f"required total energy {epsilon_inv:.6g} exceeds the budget "
            f"K*P = {cap:.6g}; raise epsilon0 or the power budget")


def solve_marginal_m1(precoders: PrecoderSet, channels: np.ndarray,
                      weights: AggregationWeights, pulses: PulseBook,
                      sigma2: float) -> ReceiverSet:
    """Closed-form per-interval combiners for fixed precoders."""
    return ReceiverSet(Mrx=optimal_receivers(precoders, channels, weights, pulses, sigma2))


def _quadratic_terms(receivers, channels: np.ndarray, weights: AggregationWeights,
                     pulses: PulseBook):
    """Per-device quadratic data (Q_k, B_k) of the signal-mismatch objective.

    (1/T) sum_t ||M[t]^H H_k C p_k[t] - W_k||_F^2
        = tr(C^H Q_k C) - 2 Re tr(B_k^H C) + const,
    Q_k = H_k^H Mbar H_k with Mbar = (1/T) sum_t M[t] M[t]^H,
    B_k = (1/T) sum_t p_k[t]^* H_k^H M[t] W_k.
    """
    m_rx = as_receiver_array(receivers)  # (T, N, I)
    t_len = m_rx.shape[0]
    if pulses.length != t_len:
        raise ContractViolation(f"pulse frame {pulses.length} != receiver frame {t_len}")
    mbar = np.einsum("tni,tpi->np", m_rx, np.conj(m_rx)) / t_len  # (N, N)
    q_mats = np.einsum("knm,np,kpq->kmq", np.conj(channels), mbar, channels)  # (K, M, M)
    hm = np.einsum("knm,tnj->ktmj", np.conj(channels), m_rx)  # H_k^H M[t], (K, T, M, I)
    w_mats = np.stack([weights.matrix(k) for k in range(weights.n_devices)])  # (K, I, I)
    b_mats = np.einsum("kt,ktmj,kji->kmi", np.conj(pulses.pulses), hm, w_mats) / t_len
    return q_mats, b_mats


def _ball_kkt_residual(c: np.ndarray, grad: np.ndarray, power_budget: float) -> float:
    """Stationarity residual of min f over the Frobenius ball of radius sqrt(P)."""
    energy = float(np.sum(np.abs(c) ** 2))
    if energy < power_budget * (1 - 1e-9):
        return float(np.linalg.norm(grad))
    lam = max(0.0, -float(np.real(np.vdot(c, grad))) / (2.0 * max(energy, 1e-300)))
    return float(np.linalg.norm(grad + 2.0 * lam * c))


def _project_ball(c: np.ndarray, power_budget: float) -> np.ndarray:
    energy = float(np.sum(np.abs(c) ** 2))
    if energy <= power_budget:
        return c
    return c * np.sqrt(power_budget / energy)


def solve_marginal_m2(receivers, channels: np.ndarray, weights: AggregationWeights,
                      pulses: PulseBook, power_budget: float, epsilon_inv: float,
                      init: PrecoderSet | None = None, max_inner_iters: int = 4000,
                      backtrack: float = 0.5, kkt_tol: float = 1e-6):
    """Precoders minimizing the signal mismatch inside the power balls.

    In the relaxed problem the energy floor sum alpha >= 1/eps never binds
    the precoders: slack alphas absorb it at zero cost. The balls therefore
    separate per device, and projected gradient descent with a backtracking
    line search runs independently on each. Returns
    (alphas, PrecoderSet, kkt_residual) with alpha_k = ||C_k||_F^2.
    """
    k_dev = channels.shape[0]
    check_energy_feasible(epsilon_inv, k_dev, power_budget)
    q_mats, b_mats = _quadratic_terms(receivers, channels, weights, pulses)
    m_tx, n_tasks = channels.shape[2], weights.w.shape[1]
    if init is not None:
        c_all = np.array(init.C, copy=True)
    else:
        c_all = np.zeros((k_dev, m_tx, n_tasks), dtype=complex)
    worst_residual = 0.0
    for k in range(k_dev):
        q, b = q_mats[k], b_mats[k]
        lam_max = float(np.max(np.linalg.eigvalsh(q)))
        if lam_max <= 0:
            # No receive energy reaches this device; the objective is flat.
            c_all[k] = 0.0
            continue
        # Gradient 2(QC - B) is Lipschitz with constant 2 lam_max.
        step0 = 1.0 / (2.0 * lam_max)
        c = _project_ball(c_all[k], power_budget)

        def value(cm):
            return float(np.real(np.einsum("mi,mn,ni->", np.conj(cm), q, cm))
                         - 2.0 * np.real(np.vdot(b, cm)))

        f = value(c)
        for _ in range(max_inner_iters):
            grad = 2.0 * (q @ c - b)
            if _ball_kkt_residual(c, grad, power_budget) < kkt_tol:
                break
            step = step0
            while True:
                cand = _project_ball(c - step * grad, power_budget)
                diff = cand - c
                gain = np.real(np.vdot(grad, diff)) + np.sum(np.abs(diff) ** 2) / (2 * step)
                if value(cand) <= f + gain + 1e-15 or step < 1e-18:
                    break
                step *= backtrack
            c, f = cand, value(cand)
        worst_residual = max(worst_residual,
                             _ball_kkt_residual(c, 2.0 * (q @ c - b), power_budget))
        c_all[k] = c
    alphas = np.sum(np.abs(c_all) ** 2, axis=(1, 2))
    return alphas, PrecoderSet(C=c_all, power_budget=power_budget), worst_residual


def project_feasible(alphas: np.ndarray, precoders: PrecoderSet, power_budget: float,
                     epsilon_inv: float):
    """Clip energies to [0, P], lift to the energy floor, rescale precoders.

    The lift adds equal shares to every device with headroom until
    sum alpha >= 1/eps. A device lifted from zero energy has no direction
    to rescale, so it transmits a flat unit-energy pattern instead.
    """
    alphas = np.clip(np.asarray(alphas, dtype=float), 0.0, power_budget)
    k_dev = alphas.shape[0]
    check_energy_feasible(epsilon_inv, k_dev, power_budget)
    if epsilon_inv > 0 and float(np.sum(precoders.energies)) == 0.0 \
            and float(np.sum(alphas)) == 0.0:
        raise ContractViolation(
            "all-zero precoders cannot be projected onto a positive energy floor")
    deficit = epsilon_inv - float(np.sum(alphas))
    while deficit > 1e-12 * max(epsilon_inv, 1.0):
        headroom = power_budget - alphas
        open_idx = headroom > 1e-15
        if not np.any(open_idx):
            break
        share = deficit / int(np.sum(open_idx))
        alphas[open_idx] += np.minimum(headroom[open_idx], share)
        deficit = epsilon_inv - float(np.sum(alphas))
    c_new = np.array(precoders.C, copy=True)
    m_tx, n_tasks = c_new.shape[1], c_new.shape[2]
    flat = np.ones((m_tx, n_tasks)) / np.sqrt(m_tx * n_tasks)
    for k in range(k_dev):
        norm = float(np.linalg.norm(c_new[k]))
        if alphas[k] <= 0:
            c_new[k] = 0.0
        elif norm <= 1e-300:
            c_new[k] = np.sqrt(alphas[k]) * flat
        else:
            c_new[k] = np.sqrt(alphas[k]) * c_new[k] / norm
    return alphas, PrecoderSet(C=c_new, power_budget=power_budget)


def bcd_solve(channels: np.ndarray, weights: AggregationWeights, pulses: PulseBook,
              sigma2: float, config: MoopConfig, rho: float, varsigma_bar2: float,
              init: PrecoderSet | None = None, seed=0) -> MoopSolution:
    """Alternate the two marginals until the aggregation error stagnates.

    Stops when the relative objective change drops below tol_rel (converged)
    or at max_outer_iters; in the latter case the best iterate along the
    trace is returned and converged=False serves as the warning flag.
    """
    k_dev, _, m_tx = channels.shape
    n_tasks = weights.w.shape[1]
    eps_inv = epsilon_inverse(config.epsilon0, rho, pulses.length, varsigma_bar2)
    check_energy_feasible(eps_inv, k_dev, config.power_budget)
    if init is None:
        precoders = random_precoders(seed, k_dev, m_tx, n_tasks, config.power_budget)
    else:
        precoders = init
    _, precoders = project_feasible(precoders.energies, precoders,
                                    config.power_budget, eps_inv)
    receivers = solve_marginal_m1(precoders, channels, weights, pulses, sigma2)
    obj = time_avg_mse(receivers, precoders, channels, weights, pulses, sigma2)
    trace = [obj]
    converged = False
    residual = float("inf")
    iters = 0
    best = (obj, precoders, receivers, residual)
    for iters in range(1, config.max_outer_iters + 1):
        alphas, precoders, residual = solve_marginal_m2(
            receivers, channels, weights, pulses, config.power_budget, eps_inv,
            init=precoders, max_inner_iters=config.max_inner_iters,
            backtrack=config.backtrack, kkt_tol=config.kkt_tol)
        alphas, precoders = project_feasible(alphas, precoders,
                                             config.power_budget, eps_inv)
        receivers = solve_marginal_m1(precoders, channels, weights, pulses, sigma2)
        new_obj = time_avg_mse(receivers, precoders, channels, weights, pulses, sigma2)
        trace.append(new_obj)
        if new_obj < best[0]:
            best = (new_obj, precoders, receivers, residual)
        if abs(new_obj - obj) <= config.tol_rel * max(abs(obj), 1e-300):
            obj = new_obj
            converged = True
            break
        obj = new_obj
    if not converged:
        # Best feasible iterate seen; the False flag is the warning.
        obj, precoders, receivers, residual = best
    energy = precoders.total_energy
    crb_l = float("inf") if energy <= 0 else \
        rho * varsigma_bar2 / (pulses.length * energy)
    return MoopSolution(precoders=precoders, receivers=receivers, mse=obj,
                        crb_l=crb_l, iters=iters, objective_trace=tuple(trace),
                        converged=converged, kkt_residual=residual)


def pareto_sweep(epsilon0_list, channels: np.ndarray, weights: AggregationWeights,
                 pulses: PulseBook, sigma2: float, power_budget: float, rho: float,
                 varsigma_bar2: float, seed=0, **config_kwargs):
    """One solve per ceiling; infeasible ceilings are skipped and reported.

    Returns (points, skipped): points is a list of (crb_l, mse) sorted by
    crb_l, skipped lists the epsilon0 values whose energy floor exceeds K*P.
    """
    eps_values = [float(e) for e in epsilon0_list]
    if not eps_values:
        raise ParameterError("epsilon0_list must be nonempty")
    points = []
    skipped = []
    for eps0 in eps_values:
        config = MoopConfig(epsilon0=eps0, power_budget=power_budget, **config_kwargs)
        try:
            sol = bcd_solve(channels, weights, pulses, sigma2, config, rho,
                            varsigma_bar2, seed=seed)
        except InfeasibleError:
            skipped.append(eps0)
            continue
        points.append((sol.crb_l, sol.mse))
    points.sort(key=lambda p: p[0])
    return points, skipped
