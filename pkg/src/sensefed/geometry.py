"""Placement geometry, array responses, and Rayleigh channel draws.

Coordinate frame: the parameter server sits at the origin, devices lie in
the z = 0 plane inside an annular arc sector, and the target occupies a
second annular arc shell with a small altitude band. A device's reflected
path response toward a candidate target position v is

    a_m(v) = alpha * exp(-j * 2*pi * m * spacing / wavelength * sin_theta)

for antenna index m = 0..M-1, with inverse-square amplitude
alpha = alpha0 / ||v - q||**2 and elevation sine
sin_theta = (v_z - q_z) / ||v - q||, q being the device position. The
response is constant-modulus across antennas by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SingularGeometryError

# Positions closer to a device than this are rejected: the inverse-square
# amplitude diverges and the path-loss model stops being meaningful.
MIN_TARGET_RANGE = 1.0


@dataclass(frozen=True)
class Position3:
    """A point in the server-centred Cartesian frame, metres."""

    lx: float
    ly: float
    lz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz], dtype=float)

    @staticmethod
    def from_array(arr) -> "Position3":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (3,):
            raise ParameterError(f"position must have 3 coordinates, got shape {arr.shape}")
        return Position3(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class TargetRegion:
    """Annular arc shell the target may occupy (and the CRB search region)."""

    r_in: float
    r_out: float
    arc_deg: float
    alt_min: float = 0.0
    alt_max: float = 0.0
    arc_center_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.r_in < self.r_out):
            raise ParameterError(f"target_region radii must satisfy 0 < r_in < r_out, got {self.r_in}, {self.r_out}")
        if not (0.0 < self.arc_deg <= 360.0):
            raise ParameterError(f"target_region.arc_deg must lie in (0, 360], got {self.arc_deg}")
        if self.alt_max < self.alt_min:
            raise ParameterError("target_region.alt_max must be >= alt_min")

    def grid(self, shape: tuple[int, int, int]) -> np.ndarray:
        """Regular grid over (radius, azimuth, altitude), flattened to (G, 3).

        An axis asked for a single point is sampled at its midpoint.
        """
        n_r, n_az, n_alt = shape
        if min(n_r, n_az, n_alt) < 1:
            raise ParameterError(f"grid shape must be positive, got {shape}")

        def axis(lo, hi, n):
            return np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])

        half = np.deg2rad(self.arc_deg) / 2.0
        center = np.deg2rad(self.arc_center_deg)
        radii = axis(self.r_in, self.r_out, n_r)
        azimuths = center + axis(-half, half, n_az)
        alts = axis(self.alt_min, self.alt_max, n_alt)
        rr, aa, zz = np.meshgrid(radii, azimuths, alts, indexing="ij")
        pts = np.stack([rr * np.cos(aa), rr * np.sin(aa), zz], axis=-1)
        return pts.reshape(-1, 3)

    def center(self) -> np.ndarray:
        r = 0.5 * (self.r_in + self.r_out)
        az = np.deg2rad(self.arc_center_deg)
        z = 0.5 * (self.alt_min + self.alt_max)
        return np.array([r * np.cos(az), r * np.sin(az), z])


@dataclass(frozen=True)
class DeviceGeometry:
    """Fixed device positions for one scenario draw."""

    positions: np.ndarray  # (K, 3)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ParameterError(f"device positions must be (K, 3) with K >= 1, got {pos.shape}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_devices(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ArrayParams:
    """Antenna array constants shared by all devices."""

    m_antennas: int
    wavelength: float = 0.1
    element_spacing: float = 0.05  # half wavelength by default
    alpha0: float = 1.0

    def __post_init__(self):
        if self.m_antennas < 1:
            raise ParameterError(f"m_antennas must be >= 1, got {self.m_antennas}")
        if self.wavelength <= 0 or self.element_spacing <= 0:
            raise ParameterError("wavelength and element_spacing must be positive")
        if self.alpha0 <= 0:
            raise ParameterError("alpha0 must be positive")

    @property
    def phase_slopes(self) -> np.ndarray:
        """kappa_m = 2*pi*m*spacing/wavelength for m = 0..M-1."""
        m = np.arange(self.m_antennas)
        return 2.0 * np.pi * m * self.element_spacing / self.wavelength


@dataclass(frozen=True)
class SensingScene:
    """Device layout plus array constants: everything the echo model needs."""

    devices: DeviceGeometry
    params: ArrayParams

    @property
    def n_devices(self) -> int:
        return self.devices.n_devices


def place_devices(rng_seed, n_devices: int, r_in: float = 50.0, r_out: float = 100.0,
                  arc_deg: float = 20.0, arc_center_deg: float = 0.0) -> DeviceGeometry:
    """Draw device positions uniformly (by area) over an annular arc sector at z = 0."""
    if n_devices < 1:
        raise ParameterError(f"n_devices must be >= 1, got {n_devices}")
    if not (0.0 < r_in < r_out):
        raise ParameterError(f"device ring radii must satisfy 0 < r_in < r_out, got {r_in}, {r_out}")
    if not (0.0 < arc_deg <= 360.0):
        raise ParameterError(f"arc_deg must lie in (0, 360], got {arc_deg}")
    rng = np.random.default_rng(rng_seed)
    # Area-uniform radius: linear density in r.
    u = rng.random(n_devices)
    radii = np.sqrt(r_in**2 + u * (r_out**2 - r_in**2))
    half = np.deg2rad(arc_deg) / 2.0
    az = np.deg2rad(arc_center_deg) + rng.uniform(-half, half, n_devices)
    pos = np.stack([radii * np.cos(az), radii * np.sin(az), np.zeros(n_devices)], axis=1)
    return DeviceGeometry(positions=pos)


def place_target(rng_seed, region: TargetRegion, devices: DeviceGeometry | None = None,
                 max_attempts: int = 100) -> Position3:
    """Draw one target position uniformly over the region shell.

    When a device layout is given, redraws until the target clears the
    MIN_TARGET_RANGE guard around every device (the inverse-square model
    breaks down inside it). Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    half = np.deg2rad(region.arc_deg) / 2.0
    center = np.deg2rad(region.arc_center_deg)
    for _ in range(max_attempts):
        r = np.sqrt(region.r_in**2 + rng.random() * (region.r_out**2 - region.r_in**2))
        az = center + rng.uniform(-half, half)
        z = rng.uniform(region.alt_min, region.alt_max) if region.alt_max > region.alt_min else region.alt_min
        pos = np.array([r * np.cos(az), r * np.sin(az), z])
        if devices is None:
            return Position3.from_array(pos)
        dists = np.linalg.norm(devices.positions - pos[None, :], axis=1)
        if np.min(dists) >= MIN_TARGET_RANGE:
            return Position3.from_array(pos)
    raise SingularGeometryError("could not place a target clear of all devices")


def _as_position(pos) -> np.ndarray:
    if isinstance(pos, Position3):
        return pos.as_array()
    arr = np.asarray(pos, dtype=float)
    return arr


def response_batch(device_positions, target_positions, params: ArrayParams,
                   check_range: bool = True):
    """Vectorized responses and gradients for broadcastable position batches.

    device_positions: (..., 3), target_positions: (..., 3) broadcastable
    against each other. Returns (a, grad, dist) with a: (..., M),
    grad: (..., 3, M) holding d a / d v_i, and dist: (...,).
    """
    dev = np.asarray(device_positions, dtype=float)
    tgt = np.asarray(target_positions, dtype=float)
    diff = tgt - dev  # (..., 3)
    dist = np.linalg.norm(diff, axis=-1)  # (...,)
    if check_range and np.any(dist < MIN_TARGET_RANGE):
        raise SingularGeometryError(
            f"target within {MIN_TARGET_RANGE} m of a device (min distance {np.min(dist):.3g} m)")
    safe = np.maximum(dist, 1e-300)
    e = diff / safe[..., None]  # unit device->target, (..., 3)
    alpha = params.alpha0 / safe**2
    sin_theta = diff[..., 2] / safe
    kappa = params.phase_slopes  # (M,)
    phase = -kappa * sin_theta[..., None]  # (..., M)
    a = alpha[..., None] * np.exp(1j * phase)
    # d alpha / d v_i = -2 alpha e_i / dist ; d sin_theta / d v_i = (delta_iz - sin_theta e_i)/dist
    dlog_alpha = -2.0 * e / safe[..., None]  # (..., 3)
    dsin = (np.array([0.0, 0.0, 1.0]) - sin_theta[..., None] * e) / safe[..., None]  # (..., 3)
    # d a_m / d v_i = a_m * (dlog_alpha_i - j kappa_m dsin_i)
    grad = a[..., None, :] * (dlog_alpha[..., :, None] - 1j * kappa * dsin[..., :, None])
    return a, grad, dist


def array_response(device_pos, target_pos, params: ArrayParams) -> np.ndarray:
    """Response vector (M,) of one device's reflected path at a target position."""
    a, _, _ = response_batch(_as_position(device_pos), _as_position(target_pos), params)
    return a


def array_response_grad(device_pos, target_pos, params: ArrayParams) -> np.ndarray:
    """Jacobian (3, M): row i is the derivative of the response wrt coordinate i."""
    _, grad, _ = response_batch(_as_position(device_pos), _as_position(target_pos), params)
    return grad


def scene_responses(scene: SensingScene, target_pos):
    """Responses and gradients for every device at once: (K, M) and (K, 3, M)."""
    a, grad, _ = response_batch(scene.devices.positions, _as_position(target_pos)[None, :],
                                scene.params)
    return a, grad


def sample_rayleigh_channels(rng_seed, n_devices: int, n_rx: int, n_tx: int) -> np.ndarray:
    """Draw i.i.d. unit-variance complex Gaussian uplink channels, shape (K, N, M).

    Per-entry E|h|^2 = 1 (real and imaginary parts each carry variance 1/2).
    """
    if min(n_devices, n_rx, n_tx) < 1:
        raise ParameterError("channel dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    re = rng.standard_normal((n_devices, n_rx, n_tx))
    im = rng.standard_normal((n_devices, n_rx, n_tx))
    return (re + 1j * im) / np.sqrt(2.0)
