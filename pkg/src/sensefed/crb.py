"""Fisher information of the target position and localization error bounds.

For the whitened statistics (unit noise variance per real component) the
Fisher information of the 3-D position is

    J_ij = Re sum_k tr( dA_k^i  C_k C_k^H  dA_k^{jH} ),

with dA_k^i the derivative of A_k(v) = sqrt(T/varsigma_k^2) a_k a_k^T along
coordinate i. The matrix of unadorned traces is Hermitian; its antisymmetric
imaginary part never enters a quadratic form, so the real part is the
information matrix proper.

Three error quantities build on J:

    crb(v)    = tr(J(v)^{-1})                          position error floor,
    crb_worst = max over a region grid of crb(v),
    crb_lower = rho * varsigma_bar^2 / (T * E),        E = sum_k ||C_k||_F^2,

where rho = 9 * eps and 1/eps is the largest sum of squared derivative norms
sum_i ||d(a_k a_k^T)/dv_i||_F^2 over the region grid and devices. With rho
computed on the same grid, crb_lower <= crb(v) holds at every grid point, so
crb_lower <= crb_worst.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SingularGeometryError, UnidentifiableError
from .geometry import (
    MIN_TARGET_RANGE,
    Position3,
    SensingScene,
    TargetRegion,
    response_batch,
    scene_responses,
)
from .sensing import as_varsigma2
from .signaling import PrecoderSet

HERMITIAN_TOL = 1e-9
EIG_RATIO_TOL = 1e-12
DEFAULT_BOUND_GRID = (21, 21, 4)
_GRID_CHUNK = 2048


@dataclass(frozen=True)
class FisherInfo:
    """3x3 position information matrix, units 1/m^2."""

    J: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.J)
        if j.shape != (3, 3) or not np.isrealobj(j):
            raise ContractViolation("Fisher information must be a real 3x3 matrix")
        scale = max(float(np.linalg.norm(j)), 1e-300)
        if np.linalg.norm(j - j.T) > 1e-9 * scale:
            raise ContractViolation("Fisher information must be symmetric")
        if np.min(np.linalg.eigvalsh(j)) < -1e-9 * scale:
            raise ContractViolation("Fisher information must be positive semidefinite")


@dataclass(frozen=True)
class WorstCaseCrb:
    value: float
    position: Position3
    n_excluded: int
    n_grid: int


@dataclass(frozen=True)
class CrbReport:
    """Scalar error-bound summary serialized into run metadata."""

    crb_at_v: float
    crb_worst: float
    crb_lower: float
    rho: float
    sigma_bar2: float
    worst_position: tuple
    n_excluded: int


def varsigma_bar2(varsigma2, n_devices: int) -> float:
    """Harmonic aggregate 1 / sum_k (1/varsigma_k^2)."""
    vs = as_varsigma2(varsigma2, n_devices)
    return float(1.0 / np.sum(1.0 / vs))


def _model_derivatives(a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """d(a a^T)/dv_i from responses a (..., M) and gradients (..., 3, M)."""
    return grad[..., :, :, None] * a[..., None, None, :] \
        + a[..., None, :, None] * grad[..., :, None, :]


def _info_from_derivatives(douter: np.ndarray, grams: np.ndarray,
                           scale2: np.ndarray) -> np.ndarray:
    """J for a batch of grid points.

    douter: (K, G, 3, M, M) unscaled model derivatives, grams: (K, M, M),
    scale2: (K,) = T / varsigma_k^2. Returns (G, 3, 3) complex (Hermitian).
    """
    tmp = np.einsum("kgimn,knp->kgimp", douter, grams)
    return np.einsum("k,kgimp,kgjmp->gij", scale2, tmp, np.conj(douter))


def fisher_info(precoders: PrecoderSet, target_pos, scene: SensingScene,
                frame_len: int, varsigma2) -> FisherInfo:
    """Position information carried by one frame of whitened statistics."""
    k_dev = scene.n_devices
    if precoders.n_devices != k_dev:
        raise ContractViolation("precoder count does not match scene devices")
    vs = as_varsigma2(varsigma2, k_dev)
    a, grad = scene_responses(scene, target_pos)  # (K, M), (K, 3, M)
    douter = _model_derivatives(a, grad)[:, None]  # (K, 1, 3, M, M)
    grams = np.stack([precoders.gram(k) for k in range(k_dev)])
    jc = _info_from_derivatives(douter, grams, frame_len / vs)[0]
    if np.linalg.norm(jc - np.conj(jc).T) > HERMITIAN_TOL * max(np.linalg.norm(jc), 1e-300):
        raise ContractViolation("information matrix lost Hermitian symmetry")
    return FisherInfo(J=np.ascontiguousarray(jc.real))


def crb(info: FisherInfo) -> float:
    """tr(J^{-1}); raises when the position is unidentifiable from J."""
    vals = np.linalg.eigvalsh(info.J)
    if vals[0] <= EIG_RATIO_TOL * max(vals[-1], 0.0) or vals[-1] <= 0:
        raise UnidentifiableError(
            f"singular information matrix (eigenvalues {vals})")
    return float(np.sum(1.0 / vals))


def worst_case_crb(precoders: PrecoderSet, scene: SensingScene, region: TargetRegion,
                   grid_shape: tuple[int, int, int] = DEFAULT_BOUND_GRID,
                   frame_len: int = 1, varsigma2=1.0) -> WorstCaseCrb:
    """Maximum CRB over a deterministic region grid.

    Grid points inside the range guard of a device or with a singular
    information matrix are excluded from the maximum and counted.
    """
    k_dev = scene.n_devices
    vs = as_varsigma2(varsigma2, k_dev)
    grams = np.stack([precoders.gram(k) for k in range(k_dev)])
    points = region.grid(grid_shape)
    dev_pos = scene.devices.positions
    best_val, best_pos, n_excluded = -np.inf, None, 0
    for start in range(0, points.shape[0], _GRID_CHUNK):
        chunk = points[start:start + _GRID_CHUNK]
        with np.errstate(over="ignore", invalid="ignore"):
            a, grad, dist = response_batch(dev_pos[:, None, :], chunk[None, :, :],
                                           scene.params, check_range=False)
        guarded = np.any(dist < MIN_TARGET_RANGE, axis=0)  # (g,)
        a[:, guarded] = 0.0
        grad[:, guarded] = 0.0
        jc = _info_from_derivatives(_model_derivatives(a, grad), grams,
                                    frame_len / vs)
        vals = np.linalg.eigvalsh(jc.real)  # (g, 3) ascending
        singular = (vals[:, 0] <= EIG_RATIO_TOL * np.maximum(vals[:, -1], 0.0)) \
            | (vals[:, -1] <= 0)
        ok = ~(guarded | singular)
        n_excluded += int(np.sum(~ok))
        if not np.any(ok):
            continue
        crbs = np.full(chunk.shape[0], -np.inf)
        crbs[ok] = np.sum(1.0 / vals[ok], axis=1)
        local_best = int(np.argmax(crbs))
        if crbs[local_best] > best_val:
            best_val = float(crbs[local_best])
            best_pos = chunk[local_best]
    if best_pos is None:
        raise UnidentifiableError("every grid point is excluded or unidentifiable")
    return WorstCaseCrb(value=best_val, position=Position3.from_array(best_pos),
                        n_excluded=n_excluded, n_grid=points.shape[0])


def fim_entry_bound(precoders: PrecoderSet, target_pos, scene: SensingScene,
                    frame_len: int, varsigma2) -> np.ndarray:
    """Entrywise information bound E * sum_k ||dA_k^i|| * ||dA_k^j||, (3, 3)."""
    k_dev = scene.n_devices
    vs = as_varsigma2(varsigma2, k_dev)
    a, grad = scene_responses(scene, target_pos)
    douter = _model_derivatives(a, grad)  # (K, 3, M, M)
    scale = np.sqrt(frame_len / vs)  # sqrt factor of A_k
    norms = scale[:, None] * np.linalg.norm(douter, axis=(2, 3))  # (K, 3)
    return precoders.total_energy * np.einsum("ki,kj->ij", norms, norms)


def compute_rho(scene: SensingScene, region: TargetRegion,
                grid_shape: tuple[int, int, int] = DEFAULT_BOUND_GRID) -> float:
    """Universal-bound constant rho = 9 * eps from the region's derivative grid.

    1/eps is the largest (over grid points and devices) value of
    sum_i ||d(a_k a_k^T)/dv_i||_F^2; noise and frame length do not enter.
    """
    points = region.grid(grid_shape)
    dev_pos = scene.devices.positions
    gaps = np.linalg.norm(points[None, :, :] - dev_pos[:, None, :], axis=-1)
    if np.any(gaps < MIN_TARGET_RANGE):
        raise SingularGeometryError(
            "region grid reaches inside a device's range guard; "
            "derivatives are unbounded there")
    worst = 0.0
    for start in range(0, points.shape[0], _GRID_CHUNK):
        chunk = points[start:start + _GRID_CHUNK]
        a, grad, _ = response_batch(dev_pos[:, None, :], chunk[None, :, :],
                                    scene.params, check_range=False)
        douter = _model_derivatives(a, grad)  # (K, g, 3, M, M)
        sums = np.sum(np.abs(douter) ** 2, axis=(2, 3, 4))  # (K, g)
        worst = max(worst, float(np.max(sums)))
    if worst <= 0:
        raise ContractViolation("vanishing response derivatives on the whole grid")
    return 9.0 / worst


def crb_lower_bound(precoders: PrecoderSet, rho: float, frame_len: int,
                    varsigma2) -> float:
    """Universal bound rho * varsigma_bar^2 / (T * E); infinite for zero energy."""
    if rho <= 0 or frame_len < 1:
        raise ContractViolation("rho must be positive and frame_len >= 1")
    energy = precoders.total_energy
    if energy <= 0:
        return float("inf")
    vbar2 = varsigma_bar2(varsigma2, precoders.n_devices)
    return float(rho * vbar2 / (frame_len * energy))


def crb_report(precoders: PrecoderSet, scene: SensingScene, region: TargetRegion,
               target_pos, frame_len: int, varsigma2,
               grid_shape: tuple[int, int, int] = DEFAULT_BOUND_GRID) -> CrbReport:
    """All scalar bounds for one scenario, computed on matched grids."""
    at_v = crb(fisher_info(precoders, target_pos, scene, frame_len, varsigma2))
    worst = worst_case_crb(precoders, scene, region, grid_shape, frame_len, varsigma2)
    rho = compute_rho(scene, region, grid_shape)
    lower = crb_lower_bound(precoders, rho, frame_len, varsigma2)
    return CrbReport(
        crb_at_v=at_v, crb_worst=worst.value, crb_lower=lower, rho=rho,
        sigma_bar2=varsigma_bar2(varsigma2, scene.n_devices),
        worst_position=tuple(worst.position.as_array()), n_excluded=worst.n_excluded)
