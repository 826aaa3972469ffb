"""Echo simulation and target-localization statistics.

Every device hears a superposition of all devices' transmissions bounced
off the target (reflected-path responses a are combined through a plain
transpose, not a conjugate transpose):

    u_k[t] = a_k(v) * (sum_l a_l(v)^T x_l[t]) + nu_k[t].

Echo noise convention: nu has independent real and imaginary parts, each
of variance varsigma2 (so E|nu|^2 = 2*varsigma2). Under this convention
the whitened statistic below has unit variance per real component and the
closed-form Fisher information in the crb module is the exact information
of the model, not a constant off.

Matched filtering over a frame of T intervals and whitening give

    Xi_k     = (1/(P T)) sum_t u_k[t] x_k[t]^H,
    Xi_hat_k = (sqrt(P T) / varsigma) * Xi_k * G_k^{-1/2},
    G_k      = (C_k C_k^H + delta * tr(C_k C_k^H)/M * I) / P,

with a small ridge delta that keeps the root invertible when C_k is rank
deficient (I < M); that case is flagged on the statistic. For long frames
Xi_hat_k concentrates on A_k(v) (C_k C_k^H)^{1/2} + noise with

    A_k(v) = sqrt(T / varsigma2_k) * a_k(v) a_k(v)^T.

The per-device localization loss is || Xi_hat_k - A_k(v) S_k ||_F^2 with
S_k the exact PSD root of C_k C_k^H; the joint ML estimate minimizes the
sum over devices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParameterError
from .geometry import Position3, SensingScene, TargetRegion, response_batch, scene_responses
from .signaling import PrecoderSet

WHITEN_RIDGE = 1e-6
# Relative eigenvalue threshold below which a precoder Gram counts as rank deficient.
RANK_TOL = 1e-9
GRID_CHUNK = 4096


@dataclass(frozen=True)
class SufficientStatistic:
    """Whitened per-device frame statistic."""

    xi_hat: np.ndarray  # (M, M)
    device: int
    rank_deficient: bool = False


@dataclass(frozen=True)
class SensingContext:
    """Everything the localization losses need besides the statistics."""

    scene: SensingScene
    frame_len: int
    varsigma2: np.ndarray  # (K,) per-component echo noise variance
    roots: np.ndarray  # (K, M, M): exact PSD root of each C_k C_k^H

    @property
    def n_devices(self) -> int:
        return self.scene.n_devices


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ np.conj(vecs).T


def _reg_inv_sqrt(gram: np.ndarray, ridge: float):
    """Inverse PSD root of gram + ridge*tr(gram)/M*I; also reports rank deficiency."""
    m = gram.shape[0]
    tr = float(np.trace(gram).real)
    if tr <= 0:
        raise ContractViolation("zero precoder cannot be whitened")
    vals, vecs = np.linalg.eigh(gram + ridge * (tr / m) * np.eye(m))
    rank_deficient = bool(np.min(np.linalg.eigvalsh(gram)) < RANK_TOL * tr)
    return (vecs / np.sqrt(vals)) @ np.conj(vecs).T, rank_deficient


def as_varsigma2(varsigma2, n_devices: int) -> np.ndarray:
    """Broadcast a scalar or per-device echo noise variance to shape (K,)."""
    arr = np.asarray(varsigma2, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_devices, float(arr))
    if arr.shape != (n_devices,) or np.any(arr <= 0):
        raise ParameterError("varsigma2 must be positive, scalar or one per device")
    return arr


def make_context(scene: SensingScene, precoders: PrecoderSet, frame_len: int,
                 varsigma2) -> SensingContext:
    if frame_len < 1:
        raise ParameterError("frame_len must be >= 1")
    roots = np.stack([psd_sqrt(precoders.gram(k)) for k in range(precoders.n_devices)])
    return SensingContext(scene=scene, frame_len=frame_len,
                          varsigma2=as_varsigma2(varsigma2, scene.n_devices), roots=roots)


def receive_echo(x_all: np.ndarray, scene: SensingScene, target_pos, rng,
                 varsigma2) -> np.ndarray:
    """All devices' echo vectors for one interval, shape (K, M).

    The reflected superposition sum_l a_l^T x_l is a scalar shared by all
    receivers; each device sees it through its own response vector.
    """
    x_all = np.asarray(x_all)
    k_dev = scene.n_devices
    if x_all.shape != (k_dev, scene.params.m_antennas):
        raise ContractViolation(f"expected transmit block {(k_dev, scene.params.m_antennas)}, got {x_all.shape}")
    varsigma2 = as_varsigma2(varsigma2, k_dev)
    a, _ = scene_responses(scene, target_pos)  # (K, M)
    common = np.sum(a * x_all)  # sum_l a_l^T x_l, transpose combining
    rng = np.random.default_rng(rng)
    sd = np.sqrt(varsigma2)[:, None]
    noise = sd * rng.standard_normal((k_dev, x_all.shape[1])) \
        + 1j * sd * rng.standard_normal((k_dev, x_all.shape[1]))
    return a * common + noise


def receive_echo_frame(tx: np.ndarray, scene: SensingScene, target_pos, rng,
                       varsigma2) -> np.ndarray:
    """Echoes for a whole frame of transmit blocks; tx and result are (K, T, M)."""
    tx = np.asarray(tx)
    k_dev = scene.n_devices
    if tx.ndim != 3 or tx.shape[0] != k_dev or tx.shape[2] != scene.params.m_antennas:
        raise ContractViolation(
            f"expected transmit frame (K, T, M) = ({k_dev}, *, {scene.params.m_antennas}), "
            f"got {tx.shape}")
    rng = np.random.default_rng(rng)
    varsigma2 = as_varsigma2(varsigma2, k_dev)
    a, _ = scene_responses(scene, target_pos)  # (K, M)
    common = np.einsum("km,ktm->t", a, tx)  # sum_l a_l^T x_l[t], (T,)
    sd = np.sqrt(varsigma2)[:, None, None]
    noise = sd * (rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape))
    return a[:, None, :] * common[None, :, None] + noise


def simulate_frame(precoders: PrecoderSet, pulses, g: np.ndarray, scene: SensingScene,
                   target_pos, rng, varsigma2):
    """One full sensing frame: transmit blocks and echoes for every interval.

    g: (K, I, T) task symbols. Returns (tx, echoes), each (K, T, M).
    """
    from .signaling import PulseBook

    pulse_arr = pulses.pulses if isinstance(pulses, PulseBook) else np.asarray(pulses)
    k_dev, _, t_len = g.shape
    if pulse_arr.shape != (k_dev, t_len):
        raise ContractViolation(f"pulses {pulse_arr.shape} do not match symbols {(k_dev, t_len)}")
    # x_k[t] = C_k g_k[t] p_k[t]: (K, T, M)
    tx = np.einsum("kmi,kit->ktm", precoders.C, g) * pulse_arr[:, :, None]
    echoes = receive_echo_frame(tx, scene, target_pos, rng, varsigma2)
    return tx, echoes


def matched_filter(echo_frame: np.ndarray, tx_frame: np.ndarray, power_budget: float) -> np.ndarray:
    """Xi = (1/(P T)) sum_t u[t] x[t]^H over one frame; frames are (T, M)."""
    u = np.asarray(echo_frame)
    x = np.asarray(tx_frame)
    if u.shape != x.shape or u.ndim != 2:
        raise ContractViolation(f"echo frame {u.shape} and transmit frame {x.shape} must match")
    t_len = u.shape[0]
    return (u.T @ np.conj(x)) / (power_budget * t_len)


def cross_correlation(frame_a: np.ndarray, frame_b: np.ndarray, power_budget: float) -> np.ndarray:
    """Empirical (1/(P T)) sum_t x_a[t] x_b[t]^H between two transmit frames."""
    return matched_filter(frame_a, frame_b, power_budget)


def whiten(xi: np.ndarray, precoder: np.ndarray, power_budget: float, frame_len: int,
           varsigma2_k: float, device: int = 0) -> SufficientStatistic:
    """Scale the matched-filter output to the unit-noise statistic."""
    xi = np.asarray(xi)
    c = np.asarray(precoder)
    if xi.shape != (c.shape[0], c.shape[0]):
        raise ContractViolation(f"statistic {xi.shape} does not match precoder rows {c.shape[0]}")
    if varsigma2_k <= 0:
        raise ParameterError("varsigma2 must be positive")
    gram = (c @ np.conj(c).T) / power_budget
    root_inv, rank_deficient = _reg_inv_sqrt(gram, WHITEN_RIDGE)
    scale = np.sqrt(power_budget * frame_len) / np.sqrt(varsigma2_k)
    return SufficientStatistic(xi_hat=scale * xi @ root_inv, device=device,
                               rank_deficient=rank_deficient)


def sensing_model(ctx: SensingContext, target_pos):
    """Model matrices A_k(v) and their position derivatives for all devices.

    Returns (A, dA) with A: (K, M, M) and dA: (K, 3, M, M);
    A_k = sqrt(T / varsigma2_k) a_k a_k^T (transpose, matching the echo model).
    """
    a, grad = scene_responses(ctx.scene, target_pos)  # (K, M), (K, 3, M)
    scale = np.sqrt(ctx.frame_len / ctx.varsigma2)  # (K,)
    outer = a[:, :, None] * a[:, None, :]
    douter = grad[:, :, :, None] * a[:, None, None, :] + a[:, None, :, None] * grad[:, :, None, :]
    return scale[:, None, None] * outer, scale[:, None, None, None] * douter


def _stack_stats(stats) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of SufficientStatistic or a raw (K, M, M) array."""
    if isinstance(stats, np.ndarray):
        arr = stats
        devices = np.arange(arr.shape[0])
    else:
        arr = np.stack([s.xi_hat for s in stats])
        devices = np.array([s.device for s in stats])
    return arr, devices


def _loss_and_grad(xi: np.ndarray, devices: np.ndarray, target_pos, ctx: SensingContext):
    a_mod, da_mod = sensing_model(ctx, target_pos)
    a_mod, da_mod = a_mod[devices], da_mod[devices]
    roots = ctx.roots[devices]
    pred = np.einsum("kmn,knp->kmp", a_mod, roots)
    resid = xi - pred
    loss = float(np.sum(np.abs(resid) ** 2))
    dpred = np.einsum("kimn,knp->kimp", da_mod, roots)
    grad = -2.0 * np.real(np.einsum("kmp,kimp->i", np.conj(resid), dpred))
    return loss, grad


def joint_loss_and_grad(stats, target_pos, ctx: SensingContext, subset=None):
    """Sum of per-device losses and its gradient wrt the position.

    subset restricts to the given device indices (used by the per-device
    oracle and the single-shot baseline).
    """
    xi, devices = _stack_stats(stats)
    if subset is not None:
        sel = np.asarray(subset)
        xi, devices = xi[sel], devices[sel]
    return _loss_and_grad(xi, devices, target_pos, ctx)


def per_device_loss_grads(stats, target_pos, ctx: SensingContext):
    """Every device's loss and position gradient at one shared position.

    Returns (losses, grads) with shapes (K,) and (K, 3); summing each
    reproduces joint_loss_and_grad. One vectorized call per protocol
    interval instead of K scalar ones.
    """
    xi, devices = _stack_stats(stats)
    a_mod, da_mod = sensing_model(ctx, target_pos)
    a_mod, da_mod = a_mod[devices], da_mod[devices]
    roots = ctx.roots[devices]
    resid = xi - np.einsum("kmn,knp->kmp", a_mod, roots)
    losses = np.sum(np.abs(resid) ** 2, axis=(1, 2))
    dpred = np.einsum("kimn,knp->kimp", da_mod, roots)
    grads = -2.0 * np.real(np.einsum("kmp,kimp->ki", np.conj(resid), dpred))
    return losses, grads


def local_loss(stat: SufficientStatistic, target_pos, ctx: SensingContext) -> float:
    loss, _ = joint_loss_and_grad([stat], target_pos, ctx)
    return loss


def local_loss_grad(stat: SufficientStatistic, target_pos, ctx: SensingContext) -> np.ndarray:
    _, grad = joint_loss_and_grad([stat], target_pos, ctx)
    return grad


def _grid_joint_loss(xi: np.ndarray, devices: np.ndarray, ctx: SensingContext,
                     points: np.ndarray) -> np.ndarray:
    """Joint loss at every grid point, vectorized and chunked: (G,)."""
    dev_pos = ctx.scene.devices.positions[devices]  # (k, 3)
    roots = ctx.roots[devices]
    scale = np.sqrt(ctx.frame_len / ctx.varsigma2[devices])
    out = np.empty(points.shape[0])
    norm_xi = np.sum(np.abs(xi) ** 2)
    for start in range(0, points.shape[0], GRID_CHUNK):
        chunk = points[start:start + GRID_CHUNK]  # (g, 3)
        a, _, dist = response_batch(dev_pos[:, None, :], chunk[None, :, :], ctx.scene.params,
                                    check_range=False)
        # Mask grid points violating the range guard instead of failing.
        bad = np.any(dist < 1.0, axis=0)
        b = np.einsum("kgp,kpn->kgn", a, roots)  # (a^T S) rows
        pred = scale[:, None, None, None] * a[:, :, :, None] * b[:, :, None, :]  # (k, g, M, M)
        # ||xi - pred||^2 = ||xi||^2 - 2 Re<xi, pred> + ||pred||^2
        cross = np.real(np.einsum("kmn,kgmn->g", np.conj(xi), pred))
        norm_pred = np.einsum("kgmn->g", np.abs(pred) ** 2)
        vals = norm_xi - 2.0 * cross + norm_pred
        vals[bad] = np.inf
        out[start:start + GRID_CHUNK] = vals
    return out


def joint_ml_oracle(stats, ctx: SensingContext, region: TargetRegion,
                    grid_shape: tuple[int, int, int] = (41, 41, 7),
                    refine_steps: int = 200, subset=None) -> Position3:
    """Grid search over the region followed by quasi-Newton refinement."""
    from scipy.optimize import minimize

    xi, devices = _stack_stats(stats)
    if subset is not None:
        sel = np.asarray(subset)
        xi, devices = xi[sel], devices[sel]
    points = region.grid(grid_shape)
    losses = _grid_joint_loss(xi, devices, ctx, points)
    best = int(np.argmin(losses))
    if not np.isfinite(losses[best]):
        raise ParameterError("no admissible grid point in the search region")
    v = points[best].copy()
    if refine_steps > 0:
        def objective(pos):
            try:
                return _loss_and_grad(xi, devices, pos, ctx)
            except Exception:
                return 1e30, np.zeros(3)

        res = minimize(objective, v, jac=True, method="L-BFGS-B",
                       options={"maxiter": refine_steps, "ftol": 1e-15, "gtol": 1e-12})
        if res.fun <= losses[best]:
            v = res.x
    return Position3.from_array(v)


def single_shot_estimate(stats, ctx: SensingContext, region: TargetRegion,
                         grid_shape: tuple[int, int, int] = (41, 41, 7),
                         refine_steps: int = 200) -> Position3:
    """Average of per-device ML estimates from a single frame.

    One device's statistic constrains only its range and elevation toward
    the target, so each per-device estimate sits somewhere on an ambiguity
    set; averaging across devices gives the one-shot baseline position.
    """
    xi, _ = _stack_stats(stats)
    estimates = [
        joint_ml_oracle(stats, ctx, region, grid_shape=grid_shape,
                        refine_steps=refine_steps, subset=[idx]).as_array()
        for idx in range(xi.shape[0])
    ]
    return Position3.from_array(np.mean(estimates, axis=0))
