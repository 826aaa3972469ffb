"""Scenario configuration: a single versioned JSON document.

The schema, with defaults shown, mirrors the shipped configs/default.json:

    {
      "schema_version": 1,
      "K": 15, "M": 4, "N": 16, "T": 16, "I": 2,
      "P": 1.0, "sigma2": 0.03, "varsigma2": 2e-09,
      "wavelength": 0.1, "element_spacing": 0.05, "alpha0": 1.0,
      "pulses": "dft",
      "geometry": {
        "seed": 0, "target_seed": 1,
        "ring": {"r_in": 50.0, "r_out": 100.0, "arc_deg": 20.0,
                 "arc_center_deg": 0.0},
        "region": {"r_in": 100.0, "r_out": 110.0, "arc_deg": 20.0,
                   "alt_min": 0.0, "alt_max": 3.0, "arc_center_deg": 0.0}
      },
      "solver": {"epsilon0": null, "max_outer_iters": 4, "tol_rel": 1e-3,
                 "max_inner_iters": 200, "backtrack": 0.5, "kkt_tol": 1e-4},
      "protocol": {"rounds": 200, "eta_v": 0.02, "eta_v_tau": null,
                   "eta_model": 0.1, "local_epochs": 5, "grad_clip": 10.0,
                   "coherence_rounds": 4, "dirichlet_alpha": 0.4,
                   "task_dim": 16, "n_classes": 4,
                   "n_train": 1200, "n_test": 400},
      "master_seed": 0
    }

varsigma2 may be one number (shared by all devices) or a list of K.
geometry.seed / geometry.target_seed may be null, in which case the
placement is derived from the master seed; with explicit values the
deployment stays fixed while master_seed varies the channels, noise,
and data split. Every violation is reported with the offending key
path. A loaded config saves back to an equivalent document
(load -> save -> load is the identity on the dataclass).

Sub-seeds are derived from master_seed by purpose label ("geometry",
"target", "data-split" here; "channels", "design-init", "ps-noise",
"echo", "sensing-pilot" inside the protocol), so changing the round
count never perturbs the world realization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ParameterError
from .geometry import ArrayParams, SensingScene, TargetRegion, place_devices, place_target
from .learning import SyntheticClassificationTask, make_synthetic_task
from .protocol import Scenario, make_scenario
from .seeds import derive_key
from .signaling import dft_pulses

SCHEMA_VERSION = 1
PULSE_FAMILIES = ("dft",)
DEFAULT_VARSIGMA2 = 2e-9


@dataclass(frozen=True)
class DeviceRing:
    """Annular arc sector the devices are scattered over (z = 0)."""

    r_in: float = 50.0
    r_out: float = 100.0
    arc_deg: float = 20.0
    arc_center_deg: float = 0.0


@dataclass(frozen=True)
class GeometrySettings:
    seed: int | None = 0
    target_seed: int | None = 1
    ring: DeviceRing = field(default_factory=DeviceRing)
    region: TargetRegion = field(default_factory=lambda: TargetRegion(
        r_in=100.0, r_out=110.0, arc_deg=20.0, alt_min=0.0, alt_max=3.0))


@dataclass(frozen=True)
class SolverSettings:
    """MoopConfig knobs minus the power budget; epsilon0=None means auto."""

    epsilon0: float | None = None
    max_outer_iters: int = 4
    tol_rel: float = 1e-3
    max_inner_iters: int = 200
    backtrack: float = 0.5
    kkt_tol: float = 1e-4

    def __post_init__(self):
        if self.epsilon0 is not None and self.epsilon0 <= 0:
            raise ParameterError("epsilon0: must be positive (or null for auto)")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ParameterError("iteration caps must be >= 1")
        if self.tol_rel <= 0 or self.kkt_tol <= 0:
            raise ParameterError("tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ParameterError("backtrack: must lie in (0, 1)")


@dataclass(frozen=True)
class ProtocolSettings:
    rounds: int = 200
    eta_v: float = 0.02
    eta_v_tau: float | None = None
    eta_model: float = 0.1
    local_epochs: int = 5
    grad_clip: float = 10.0
    coherence_rounds: int = 4
    dirichlet_alpha: float = 0.4
    task_dim: int = 16
    n_classes: int = 4
    n_train: int = 1200
    n_test: int = 400

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1 or self.coherence_rounds < 1:
            raise ParameterError("rounds, local_epochs and coherence_rounds must be >= 1")
        if self.eta_v <= 0 or self.eta_model <= 0 or self.grad_clip <= 0:
            raise ParameterError("step sizes and grad_clip must be positive")
        if self.eta_v_tau is not None and self.eta_v_tau <= 0:
            raise ParameterError("eta_v_tau: must be positive (or null for a flat step)")
        if self.dirichlet_alpha <= 0:
            raise ParameterError("dirichlet_alpha: must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one experiment needs, in declaration order of the schema."""

    K: int = 15
    M: int = 4
    N: int = 16
    T: int = 16
    I: int = 2  # noqa: E741 - the conventional stream-count symbol
    P: float = 1.0
    sigma2: float = 0.03
    varsigma2: tuple | None = None  # None -> (DEFAULT_VARSIGMA2,) * K
    wavelength: float = 0.1
    element_spacing: float = 0.05
    alpha0: float = 1.0
    pulses: str = "dft"
    geometry: GeometrySettings = field(default_factory=GeometrySettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    protocol: ProtocolSettings = field(default_factory=ProtocolSettings)
    master_seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ParameterError(
                f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        for name in ("K", "M", "N", "T"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name}: must be a positive integer")
        if self.I not in (1, 2):
            raise ParameterError("I: stream count must be 1 (learning only) or 2")
        if self.T < self.K:
            raise ParameterError(
                f"T: orthogonal pulses need T >= K, got T={self.T} < K={self.K}")
        if self.P <= 0 or self.sigma2 < 0:
            raise ParameterError("P must be positive and sigma2 nonnegative")
        if self.varsigma2 is None:
            object.__setattr__(self, "varsigma2", (DEFAULT_VARSIGMA2,) * self.K)
        if len(self.varsigma2) != self.K or any(v <= 0 for v in self.varsigma2):
            raise ParameterError("varsigma2: needs K positive entries")
        if self.pulses not in PULSE_FAMILIES:
            raise ParameterError(
                f"pulses: unknown family '{self.pulses}', options: {PULSE_FAMILIES}")
        if self.protocol.task_dim % self.T != 0:
            raise ParameterError(
                "protocol.task_dim: must be a whole number of length-T frames, "
                f"got {self.protocol.task_dim} with T={self.T}")


def _check_unknown(mapping: dict, allowed, path: str):
    extra = set(mapping) - set(allowed)
    if extra:
        key = sorted(extra)[0]
        raise ParameterError(f"unknown key '{_join(path, key)}'")


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _fetch(mapping: dict, key: str, path: str, required: bool = False, default=None):
    if key not in mapping:
        if required:
            raise ParameterError(f"missing required key '{_join(path, key)}'")
        return default
    return mapping[key]


def _as_int(value, path: str) -> int:
    # bool is an int subclass; JSON true/false must not slip through here.
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParameterError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_real(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParameterError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ParameterError(f"{path}: expected a string, got {value!r}")
    return value


def _section(mapping, key, path: str) -> dict:
    value = _fetch(mapping, key, path, default={})
    if not isinstance(value, dict):
        raise ParameterError(f"{_join(path, key)}: expected an object")
    return value


def _opt(parse, value, path: str):
    return None if value is None else parse(value, path)


def _parse_dataclass(cls, raw: dict, path: str, parsers: dict):
    _check_unknown(raw, parsers.keys(), path)
    kwargs = {}
    for name, parse in parsers.items():
        if name in raw:
            kwargs[name] = parse(raw[name], _join(path, name))
    try:
        return cls(**kwargs)
    except ParameterError as exc:
        raise ParameterError(f"{path}: {exc}" if path else str(exc)) from exc


_RING_PARSERS = {name: _as_real for name in
                 ("r_in", "r_out", "arc_deg", "arc_center_deg")}
_REGION_PARSERS = {name: _as_real for name in
                   ("r_in", "r_out", "arc_deg", "alt_min", "alt_max",
                    "arc_center_deg")}
_SOLVER_PARSERS = {
    "epsilon0": lambda v, p: _opt(_as_real, v, p),
    "max_outer_iters": _as_int,
    "tol_rel": _as_real,
    "max_inner_iters": _as_int,
    "backtrack": _as_real,
    "kkt_tol": _as_real,
}
_PROTOCOL_PARSERS = {
    "rounds": _as_int,
    "eta_v": _as_real,
    "eta_v_tau": lambda v, p: _opt(_as_real, v, p),
    "eta_model": _as_real,
    "local_epochs": _as_int,
    "grad_clip": _as_real,
    "coherence_rounds": _as_int,
    "dirichlet_alpha": _as_real,
    "task_dim": _as_int,
    "n_classes": _as_int,
    "n_train": _as_int,
    "n_test": _as_int,
}
_TOP_KEYS = ("schema_version", "K", "M", "N", "T", "I", "P", "sigma2",
             "varsigma2", "wavelength", "element_spacing", "alpha0", "pulses",
             "geometry", "solver", "protocol", "master_seed")


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Validate a parsed JSON document; errors carry the offending key path."""
    if not isinstance(raw, dict):
        raise ParameterError("the configuration document must be a JSON object")
    _check_unknown(raw, _TOP_KEYS, "")
    if "schema_version" not in raw:
        raise ParameterError("missing required key 'schema_version'")
    version = _as_int(raw["schema_version"], "schema_version")
    if version != SCHEMA_VERSION:
        raise ParameterError(
            f"schema_version: this reader understands {SCHEMA_VERSION}, got {version}")

    kwargs = {"schema_version": version}
    for name in ("K", "M", "N", "T", "I"):
        kwargs[name] = _as_int(_fetch(raw, name, "", required=True), name)
    for name in ("P", "sigma2", "wavelength", "element_spacing", "alpha0"):
        if name in raw:
            kwargs[name] = _as_real(raw[name], name)
    if "pulses" in raw:
        kwargs["pulses"] = _as_str(raw["pulses"], "pulses")
    if "master_seed" in raw:
        kwargs["master_seed"] = _as_int(raw["master_seed"], "master_seed")

    vs = _fetch(raw, "varsigma2", "", required=True)
    if isinstance(vs, list):
        kwargs["varsigma2"] = tuple(
            _as_real(v, f"varsigma2[{i}]") for i, v in enumerate(vs))
    else:
        kwargs["varsigma2"] = (_as_real(vs, "varsigma2"),) * kwargs["K"]

    geo = _section(raw, "geometry", "")
    _check_unknown(geo, ("seed", "target_seed", "ring", "region"), "geometry")
    geo_kwargs = {}
    if "seed" in geo:
        geo_kwargs["seed"] = _opt(_as_int, geo["seed"], "geometry.seed")
    if "target_seed" in geo:
        geo_kwargs["target_seed"] = _opt(_as_int, geo["target_seed"],
                                         "geometry.target_seed")
    if "ring" in geo:
        geo_kwargs["ring"] = _parse_dataclass(
            DeviceRing, _section(geo, "ring", "geometry"), "geometry.ring",
            _RING_PARSERS)
    if "region" in geo:
        geo_kwargs["region"] = _parse_dataclass(
            TargetRegion, _section(geo, "region", "geometry"), "geometry.region",
            _REGION_PARSERS)
    kwargs["geometry"] = GeometrySettings(**geo_kwargs)

    kwargs["solver"] = _parse_dataclass(
        SolverSettings, _section(raw, "solver", ""), "solver", _SOLVER_PARSERS)
    kwargs["protocol"] = _parse_dataclass(
        ProtocolSettings, _section(raw, "protocol", ""), "protocol",
        _PROTOCOL_PARSERS)
    return ScenarioConfig(**kwargs)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    doc = {
        "schema_version": cfg.schema_version,
        "K": cfg.K, "M": cfg.M, "N": cfg.N, "T": cfg.T, "I": cfg.I,
        "P": cfg.P, "sigma2": cfg.sigma2, "varsigma2": list(cfg.varsigma2),
        "wavelength": cfg.wavelength, "element_spacing": cfg.element_spacing,
        "alpha0": cfg.alpha0, "pulses": cfg.pulses,
        "geometry": {
            "seed": cfg.geometry.seed,
            "target_seed": cfg.geometry.target_seed,
            "ring": asdict(cfg.geometry.ring),
            "region": asdict(cfg.geometry.region),
        },
        "solver": asdict(cfg.solver),
        "protocol": asdict(cfg.protocol),
        "master_seed": cfg.master_seed,
    }
    return doc


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read config '{path}': {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config '{path}' is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_scenario(cfg: ScenarioConfig, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
                    + "\n", encoding="utf-8")


def realize(cfg: ScenarioConfig, master_seed: int | None = None
            ) -> tuple[Scenario, SyntheticClassificationTask]:
    """Build the runtime world a config describes.

    master_seed overrides cfg.master_seed (the orchestration loop hands
    out one per replicate). Geometry follows its own seeds when set and
    the master seed otherwise; the data split always follows the master
    seed, so replicates see fresh heterogeneity at the same alpha.
    """
    ms = cfg.master_seed if master_seed is None else master_seed
    dev_seed = cfg.geometry.seed if cfg.geometry.seed is not None \
        else derive_key(ms, "geometry")
    tgt_seed = cfg.geometry.target_seed if cfg.geometry.target_seed is not None \
        else derive_key(ms, "target")
    ring = cfg.geometry.ring
    devices = place_devices(dev_seed, cfg.K, r_in=ring.r_in, r_out=ring.r_out,
                            arc_deg=ring.arc_deg,
                            arc_center_deg=ring.arc_center_deg)
    region = cfg.geometry.region
    target = place_target(tgt_seed, region, devices)
    scene = SensingScene(devices=devices, params=ArrayParams(
        m_antennas=cfg.M, wavelength=cfg.wavelength,
        element_spacing=cfg.element_spacing, alpha0=cfg.alpha0))
    scenario = make_scenario(
        scene, target, region, dft_pulses(cfg.K, cfg.T), n_rx=cfg.N,
        power_budget=cfg.P, sigma2=cfg.sigma2, varsigma2=cfg.varsigma2,
        epsilon0=cfg.solver.epsilon0,
        max_outer_iters=cfg.solver.max_outer_iters,
        tol_rel=cfg.solver.tol_rel,
        max_inner_iters=cfg.solver.max_inner_iters,
        backtrack=cfg.solver.backtrack,
        kkt_tol=cfg.solver.kkt_tol)
    pro = cfg.protocol
    task = make_synthetic_task(derive_key(ms, "data-split"), cfg.K,
                               pro.dirichlet_alpha, dim=pro.task_dim,
                               n_classes=pro.n_classes, n_train=pro.n_train,
                               n_test=pro.n_test)
    return scenario, task


def protocol_kwargs(cfg: ScenarioConfig) -> dict:
    """Keyword arguments run_collabsensefed expects, straight from the config."""
    pro = cfg.protocol
    return {
        "eta_v": pro.eta_v,
        "eta_v_tau": pro.eta_v_tau,
        "eta_model": pro.eta_model,
        "local_epochs": pro.local_epochs,
        "grad_clip": pro.grad_clip,
        "coherence_rounds": pro.coherence_rounds,
        "tasks": "both" if cfg.I == 2 else "learning",
    }
