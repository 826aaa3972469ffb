"""Joint sensing-and-learning rounds over the simulated uplink.

run_collabsensefed drives the whole loop. Each round the devices run a
few local model-descent epochs, build one standardized block per task
stream (a sensing-gradient entry and a model-delta entry per interval),
and transmit all blocks simultaneously under their pulses. The server
combines the superimposed observation with the current receive
combiners, de-standardizes it, nudges one target coordinate per
interval, and applies the averaged model delta at the round boundary.
Devices hear their own echoes during the frame and refresh the whitened
statistic after every frame, so the next round's sensing gradients
descend the latest joint localization loss. Channels hold for
coherence_rounds rounds; each new block redraws them and re-solves the
beamforming design at the same power budget.

Baselines (run_baselines) share the master seed, so geometry, channels,
pilots, and noise line up across runs wherever consumption patterns
match: "perfect_feel" aggregates exactly over a noiseless orthogonal
uplink with no transmissions at all, "ota_feel" learns over the air
without a sensing stream, and "single_shot" localizes once by averaging
per-device estimates from the first frame and then spends every
subsequent round on learning alone.

Conventions, documented once:

* Standardization: each device's per-round, per-stream block is scaled
  to zero mean and unit sample variance before encoding, which keeps
  every frame on the power contract E||C_k g||^2 = ||C_k||_F^2. The
  server restores the aggregate with the weighted mean scale
  sbar_i = sum_k w_ki scale_ki / sum_k w_ki and offset
  sum_k w_ki mean_ki; the restoration is exact when device scales
  agree and an approximation otherwise.
* The real part of the decoded vector drives all updates; targets are
  real by construction.
* Bootstrap: while no whitened statistic exists yet (the first round),
  the sensing stream carries standardized pseudo-random pilots, so
  power use and inter-task interference are realistic from round one;
  the decoded sensing value is ignored in pilot rounds.
* eta_model is the devices' local gradient-descent step; the global
  model moves by the decoded weighted-average delta itself.
* Sensing gradients are clipped to norm grad_clip per device before
  encoding, and interval t updates target coordinate t mod 3, giving
  every coordinate roughly d/3 updates per round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import apply_receiver, as_receiver_array, ps_receive
from .crb import compute_rho, crb, fisher_info, varsigma_bar2
from .errors import ParameterError
from .geometry import Position3, SensingScene, TargetRegion, sample_rayleigh_channels
from .learning import LearningTask
from .moop import MoopConfig, MoopSolution, bcd_solve
from .seeds import derive_rng
from .sensing import (
    as_varsigma2,
    make_context,
    matched_filter,
    per_device_loss_grads,
    receive_echo_frame,
    single_shot_estimate,
    whiten,
)
from .signaling import PulseBook, make_weights, standardize

VALID_AGGREGATION = ("ota", "perfect")
VALID_TASKS = ("both", "learning", "sensing")
BASELINES = ("collabsensefed", "perfect_feel", "ota_feel", "single_shot")
# With epsilon0 unset, it is chosen so the implied energy floor sits at
# this fraction of the energy cap K * P: comfortably feasible, and binding
# only when the solver would otherwise throw energy away.
ENERGY_FLOOR_FRAC = 0.5


@dataclass(frozen=True)
class Scenario:
    """One realized world: geometry, noise levels, pulses, solver knobs."""

    scene: SensingScene
    target: Position3
    region: TargetRegion
    pulses: PulseBook
    n_rx: int
    sigma2: float
    varsigma2: np.ndarray  # (K,) per-component echo noise
    moop: MoopConfig  # carries the power budget and the sensing ceiling
    rho: float  # universal-bound constant of (scene, region)

    def __post_init__(self):
        if self.pulses.n_devices != self.scene.n_devices:
            raise ParameterError("pulse book and scene disagree on the device count")
        if self.n_rx < 1:
            raise ParameterError("the server needs at least one antenna")
        if self.sigma2 < 0 or self.rho <= 0:
            raise ParameterError("sigma2 must be nonnegative and rho positive")
        as_varsigma2(self.varsigma2, self.scene.n_devices)

    @property
    def n_devices(self) -> int:
        return self.scene.n_devices

    @property
    def power_budget(self) -> float:
        return self.moop.power_budget


def make_scenario(scene: SensingScene, target: Position3, region: TargetRegion,
                  pulses: PulseBook, n_rx: int, power_budget: float, sigma2: float,
                  varsigma2, epsilon0: float | None = None, **solver_knobs) -> Scenario:
    """Resolve the derived quantities once: rho and, if unset, epsilon0.

    epsilon0=None picks the ceiling whose energy floor is
    ENERGY_FLOOR_FRAC of the cap K * P, guaranteeing feasibility with
    slack. solver_knobs pass through to MoopConfig (iteration caps and
    tolerances).
    """
    if not isinstance(target, Position3):
        target = Position3.from_array(np.asarray(target, dtype=float))
    vs = as_varsigma2(varsigma2, scene.n_devices)
    rho = compute_rho(scene, region)
    if epsilon0 is None:
        floor = ENERGY_FLOOR_FRAC * scene.n_devices * power_budget
        epsilon0 = rho * varsigma_bar2(vs, scene.n_devices) / (pulses.length * floor)
    moop = MoopConfig(epsilon0=epsilon0, power_budget=power_budget, **solver_knobs)
    return Scenario(scene=scene, target=target, region=region, pulses=pulses,
                    n_rx=n_rx, sigma2=sigma2, varsigma2=vs, moop=moop, rho=rho)


@dataclass(frozen=True)
class RoundLog:
    """One communication round's metrics; NaN marks streams a run lacks."""

    round: int
    sensing_mse: float  # ||v_true - v_estimate||^2, m^2
    agg_mse: float  # closed-form aggregation error of the active design
    task_loss: float
    task_accuracy: float
    crb_l: float  # tr(J^{-1}) at the true position for the active design


@dataclass
class _BlockDesign:
    """Everything a coherence block pins down."""

    solution: MoopSolution
    receivers: np.ndarray  # (T, N, I)
    ctx: object  # SensingContext for frames sent under this design
    crb_l: float
    agg_mse: float


def _standardize_blocks(raw: np.ndarray):
    """Per-device, per-stream standardization of (K, I, T) blocks.

    Returns (z, means, scales); degenerate blocks come back as zeros with
    scale 0, matching how the aggregate is later restored.
    """
    z = np.empty_like(raw)
    means = np.empty(raw.shape[:2])
    scales = np.empty(raw.shape[:2])
    for k in range(raw.shape[0]):
        for i in range(raw.shape[1]):
            z[k, i], st = standardize(raw[k, i])
            means[k, i], scales[k, i] = st.mean, st.scale
    return z, means, scales


def _clipped_sensing_grads(stats, stats_ctx, v: np.ndarray, grad_clip: float) -> np.ndarray:
    """Per-device position gradients at v, norm-clipped: (K, 3)."""
    _, grads = per_device_loss_grads(stats, v, stats_ctx)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    return grads * np.minimum(1.0, grad_clip / np.maximum(norms, 1e-300))


def _design_block(scenario: Scenario, weights, channels: np.ndarray,
                  warm, seed_rng, track_sensing: bool) -> _BlockDesign:
    vbar2 = varsigma_bar2(scenario.varsigma2, scenario.n_devices)
    init = warm if warm is not None and warm.n_tasks == weights.n_tasks else None
    sol = bcd_solve(channels, weights, scenario.pulses, scenario.sigma2,
                    scenario.moop, scenario.rho, vbar2, init=init, seed=seed_rng)
    ctx = make_context(scenario.scene, sol.precoders, scenario.pulses.length,
                       scenario.varsigma2)
    if track_sensing:
        info = fisher_info(sol.precoders, scenario.target.as_array(), scenario.scene,
                           scenario.pulses.length, scenario.varsigma2)
        crb_l = crb(info)
    else:
        crb_l = float("nan")
    return _BlockDesign(solution=sol, receivers=as_receiver_array(sol.receivers),
                        ctx=ctx, crb_l=crb_l, agg_mse=sol.mse)


def _frame_statistics(tx: np.ndarray, design: _BlockDesign, scenario: Scenario,
                      echo_rng) -> list:
    """Echo, matched-filter, and whiten one frame's worth of transmissions."""
    t_len = tx.shape[1]
    echoes = receive_echo_frame(tx, scenario.scene, scenario.target.as_array(),
                                echo_rng, scenario.varsigma2)
    precoders = design.solution.precoders
    power = scenario.power_budget
    return [
        whiten(matched_filter(echoes[k], tx[k], power), precoders.C[k], power,
               t_len, float(scenario.varsigma2[k]), device=k)
        for k in range(tx.shape[0])
    ]


def _run(scenario: Scenario, task, rounds: int, master_seed: int, *, eta_v: float,
         eta_model: float, local_epochs: int, grad_clip: float, coherence_rounds: int,
         aggregation: str, tasks: str, v_init, schedule, single_shot: bool,
         eta_v_tau: float | None):
    if aggregation not in VALID_AGGREGATION:
        raise ParameterError(f"aggregation must be one of {VALID_AGGREGATION}")
    if tasks not in VALID_TASKS:
        raise ParameterError(f"tasks must be one of {VALID_TASKS}")
    if rounds < 1 or coherence_rounds < 1:
        raise ParameterError("rounds and coherence_rounds must be >= 1")
    if eta_v <= 0 or grad_clip <= 0:
        raise ParameterError("eta_v and grad_clip must be positive")
    if eta_v_tau is not None and eta_v_tau <= 0:
        raise ParameterError("eta_v_tau must be positive when given")
    if single_shot and tasks != "both":
        raise ParameterError("the single-shot variant needs both streams in round one")
    learn = tasks in ("both", "learning")
    sense_iterative = tasks in ("both", "sensing") and not single_shot
    if learn and task is None:
        raise ParameterError("a learning task is required unless tasks='sensing'")
    if not learn:
        task = None

    scene = scenario.scene
    k_dev = scenario.n_devices
    t_len = scenario.pulses.length
    if learn:
        if task.n_devices != k_dev:
            raise ParameterError("task and scenario disagree on the device count")
        intervals = task.dim
        if intervals % t_len != 0 or intervals < 2:
            raise ParameterError(
                f"model dimension {intervals} must be a whole number of "
                f"length-{t_len} pulse frames")
    else:
        intervals = t_len
        if intervals < 2:
            raise ParameterError("standardized blocks need at least two intervals")
    pulse_arr = scenario.pulses.pulses  # (K, T)
    weights_head = make_weights(k_dev, task.sample_counts if learn else None,
                                sensing=tasks != "learning", learning=learn)
    weights_tail = make_weights(k_dev, task.sample_counts, sensing=False,
                                learning=True) if single_shot else weights_head

    v_true = scenario.target.as_array()
    v = np.asarray(v_init, dtype=float).copy() if v_init is not None \
        else scenario.region.center()
    if v.shape != (3,):
        raise ParameterError("v_init must be a 3-vector")
    model = task.init_model() if learn else None
    stats = None
    stats_ctx = None
    design = None
    frozen_mse = float("nan")  # single-shot sensing error, fixed after round 1
    logs = []

    for rnd in range(1, rounds + 1):
        sense_now = sense_iterative or (single_shot and rnd == 1)
        weights = weights_head if (not single_shot or rnd == 1) else weights_tail
        learn_stream = weights.n_tasks - 1  # learning is always the last column
        # Inverse-time cooling of the sensing step: full size through the
        # approach, shrinking floor once the estimate hovers near the target.
        eta_r = eta_v if eta_v_tau is None else eta_v / (1.0 + (rnd - 1) / eta_v_tau)
        uses_uplink = aggregation == "ota" or sense_now
        block = (rnd - 1) // coherence_rounds
        if uses_uplink:
            new_block = (rnd - 1) % coherence_rounds == 0
            mode_flip = single_shot and rnd == 2
            if design is None or new_block or mode_flip:
                channels = sample_rayleigh_channels(
                    derive_rng(master_seed, "channels", block), k_dev,
                    scenario.n_rx, scene.params.m_antennas)
                if schedule is not None and rnd == 1:
                    if schedule.precoders.n_devices != k_dev or \
                            schedule.precoders.n_tasks != weights.n_tasks:
                        raise ParameterError("provided schedule does not fit the scenario")
                    sol = schedule
                    design = _BlockDesign(
                        solution=sol, receivers=as_receiver_array(sol.receivers),
                        ctx=make_context(scene, sol.precoders, t_len, scenario.varsigma2),
                        crb_l=crb(fisher_info(sol.precoders, v_true, scene, t_len,
                                              scenario.varsigma2)) if sense_now else float("nan"),
                        agg_mse=sol.mse)
                else:
                    warm = design.solution.precoders if design is not None else None
                    design = _design_block(
                        scenario, weights, channels, warm,
                        derive_rng(master_seed, "design-init", block),
                        track_sensing=sense_now)

        # Local learning phase: a few plain descent epochs per device.
        if learn:
            deltas = np.stack([
                task.local_update(model, k, eta_model, local_epochs) - model
                for k in range(k_dev)
            ])  # (K, d)

        # Raw per-stream blocks for this round, ordered like the weights.
        pilot = False
        streams = []
        if sense_now:
            if stats is None:
                pilot = True
                streams.append(derive_rng(master_seed, "sensing-pilot", rnd)
                               .standard_normal((k_dev, intervals)))
            else:
                grads = _clipped_sensing_grads(stats, stats_ctx, v, grad_clip)
                streams.append(grads[:, np.arange(intervals) % 3])
        if learn:
            streams.append(deltas)
        raw = np.stack(streams, axis=1)  # (K, I, intervals)

        if aggregation == "perfect":
            # Exact weighted aggregation of the raw blocks, every interval.
            decoded = np.einsum("ki,kit->it", weights.w, raw)
        if uses_uplink:
            z, means, scales = _standardize_blocks(raw)
            w_arr = weights.w  # (K, I)
            sbar = np.sum(w_arr * scales, axis=0) / np.sum(w_arr, axis=0)
            offset = np.sum(w_arr * means, axis=0)
            ps_rng = derive_rng(master_seed, "ps-noise", rnd)
            tx = np.empty((k_dev, intervals, scene.params.m_antennas), dtype=complex)

        gbar = np.empty(intervals) if learn else None
        precoders_c = design.solution.precoders.C if uses_uplink else None
        for t in range(intervals):
            slot = t % t_len
            if uses_uplink:
                x_all = np.einsum("kmi,ki->km", precoders_c, z[:, :, t]) \
                    * pulse_arr[:, slot, None]
                tx[:, t, :] = x_all
                if aggregation == "ota":
                    y = ps_receive(x_all, channels, ps_rng, scenario.sigma2)
                    r_raw = np.real(apply_receiver(design.receivers[slot], y))
                    r_hat = sbar * r_raw + offset
            if aggregation == "perfect":
                r_hat = decoded[:, t]
            if sense_now and not pilot:
                v[t % 3] -= eta_r * r_hat[0]
            if learn:
                gbar[t] = r_hat[learn_stream]

        # Devices refresh their whitened statistics from this round's echoes.
        if sense_now:
            echo_rng = derive_rng(master_seed, "echo", rnd)
            for f in range(intervals // t_len):
                seg = tx[:, f * t_len:(f + 1) * t_len, :]
                stats = _frame_statistics(seg, design, scenario, echo_rng)
                stats_ctx = design.ctx
            if single_shot and rnd == 1:
                v_hat = single_shot_estimate(stats, stats_ctx, scenario.region)
                frozen_mse = float(np.sum((v_hat.as_array() - v_true) ** 2))

        if learn:
            model = model + gbar

        if single_shot:
            sensing_mse = frozen_mse
        elif sense_iterative:
            sensing_mse = float(np.sum((v - v_true) ** 2))
        else:
            sensing_mse = float("nan")
        if learn:
            result = task.evaluate(model)
            task_loss, task_accuracy = result.loss, result.accuracy
        else:
            task_loss = task_accuracy = float("nan")
        if aggregation == "perfect":
            agg_mse = 0.0
        else:
            agg_mse = design.agg_mse
        crb_l = design.crb_l if (design is not None and sense_now) else float("nan")
        logs.append(RoundLog(round=rnd, sensing_mse=sensing_mse, agg_mse=agg_mse,
                             task_loss=task_loss, task_accuracy=task_accuracy,
                             crb_l=crb_l))
    return logs


def run_collabsensefed(scenario: Scenario, task: LearningTask | None, rounds: int,
                       master_seed: int = 0, *, eta_v: float = 1e-2,
                       eta_v_tau: float | None = None,
                       eta_model: float = 0.1, local_epochs: int = 5,
                       grad_clip: float = 10.0, coherence_rounds: int = 4,
                       aggregation: str = "ota", tasks: str = "both",
                       v_init=None, schedule: MoopSolution | None = None) -> list:
    """Run the joint protocol; one RoundLog per round.

    tasks picks the active streams ("both", "learning", "sensing");
    aggregation "perfect" replaces the uplink with exact weighted sums.
    eta_v_tau, if given, cools the sensing step as eta_v / (1 + r / tau).
    schedule, if given, is used as the first coherence block's design
    instead of solving it (the caller warrants it was solved for that
    block's channels).
    """
    return _run(scenario, task, rounds, master_seed, eta_v=eta_v, eta_model=eta_model,
                local_epochs=local_epochs, grad_clip=grad_clip,
                coherence_rounds=coherence_rounds, aggregation=aggregation,
                tasks=tasks, v_init=v_init, schedule=schedule, single_shot=False,
                eta_v_tau=eta_v_tau)


def run_single_shot(scenario: Scenario, task: LearningTask, rounds: int,
                    master_seed: int = 0, *, eta_v: float = 1e-2,
                    eta_v_tau: float | None = None,
                    eta_model: float = 0.1, local_epochs: int = 5,
                    grad_clip: float = 10.0, coherence_rounds: int = 4,
                    aggregation: str = "ota", v_init=None,
                    schedule: MoopSolution | None = None) -> list:
    """Localize once from the first frame, then learn with all the power.

    Round one runs the full two-stream frame (pilots on the sensing
    stream); its statistics feed the averaged per-device estimate whose
    error the sensing_mse column then reports unchanged for every round.
    From round two on the design is re-solved for the learning stream
    alone under the same channels and budget.
    """
    return _run(scenario, task, rounds, master_seed, eta_v=eta_v, eta_model=eta_model,
                local_epochs=local_epochs, grad_clip=grad_clip,
                coherence_rounds=coherence_rounds, aggregation=aggregation,
                tasks="both", v_init=v_init, schedule=schedule, single_shot=True,
                eta_v_tau=eta_v_tau)


def run_baselines(scenario: Scenario, task: LearningTask, rounds: int,
                  master_seed: int = 0, baselines=BASELINES, **knobs) -> dict:
    """Paired runs for comparison plots, keyed by baseline name.

    All runs share the master seed, so geometry, channels, pilots, and
    noise draws coincide wherever the runs consume them identically.
    """
    # Each comparison run pins its own stream set and decode mode, so any
    # caller-supplied values for those only apply to the full protocol.
    shared = {key: val for key, val in knobs.items()
              if key not in ("tasks", "aggregation")}
    out = {}
    for name in baselines:
        if name == "collabsensefed":
            out[name] = run_collabsensefed(scenario, task, rounds, master_seed, **knobs)
        elif name == "perfect_feel":
            out[name] = run_collabsensefed(scenario, task, rounds, master_seed,
                                           aggregation="perfect", tasks="learning",
                                           **shared)
        elif name == "ota_feel":
            out[name] = run_collabsensefed(scenario, task, rounds, master_seed,
                                           tasks="learning", **shared)
        elif name == "single_shot":
            out[name] = run_single_shot(scenario, task, rounds, master_seed,
                                        **{k: v for k, v in knobs.items()
                                           if k != "tasks"})
        else:
            raise ParameterError(f"unknown baseline '{name}'")
    return out
