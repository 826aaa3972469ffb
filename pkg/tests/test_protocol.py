"""Round-loop tests: decode algebra, power accounting, baselines, determinism.

The heavyweight checks mirror the engine from the outside: an oracle
rebuilds every round from the public primitives (design solve, local
updates, standardization, pulse spreading, echoes, whitening) using the
same derived seed streams, and the run must track it. The mirror keeps
the intermediate quantities the engine never exposes (decoded symbols,
transmitted frames), so the multi-task separation and power contracts
can be asserted directly.
"""

import numpy as np
import pytest

from sensefed.crb import varsigma_bar2
from sensefed.errors import ParameterError
from sensefed.geometry import (
    ArrayParams,
    SensingScene,
    TargetRegion,
    place_devices,
    place_target,
    sample_rayleigh_channels,
)
from sensefed.learning import make_synthetic_task
from sensefed.moop import bcd_solve
from sensefed.protocol import (
    BASELINES,
    Scenario,
    make_scenario,
    run_baselines,
    run_collabsensefed,
    run_single_shot,
)
from sensefed.seeds import derive_rng
from sensefed.sensing import (
    joint_loss_and_grad,
    make_context,
    matched_filter,
    per_device_loss_grads,
    receive_echo_frame,
    whiten,
)
from sensefed.signaling import dft_pulses, make_weights, standardize

K_SMALL = 4

pytestmark = pytest.mark.filterwarnings("error::RuntimeWarning")


def small_scenario(vs2=1e-9, sigma2=0.05, t_len=4, **knobs):
    devices = place_devices(3, K_SMALL)
    scene = SensingScene(devices=devices, params=ArrayParams(m_antennas=2))
    region = TargetRegion(100, 110, 20, 0, 3)
    target = place_target(4, region, devices)
    knobs.setdefault("max_outer_iters", 3)
    knobs.setdefault("max_inner_iters", 120)
    knobs.setdefault("tol_rel", 1e-3)
    knobs.setdefault("kkt_tol", 1e-3)
    return make_scenario(scene, target, region, dft_pulses(K_SMALL, t_len),
                         n_rx=6, power_budget=1.0, sigma2=sigma2, varsigma2=vs2,
                         **knobs)


def small_task(dim=8):
    # dim = classes * (features + 1); 8 = 2 * (3 + 1) fits two length-4 frames.
    return make_synthetic_task(11, K_SMALL, 0.4, dim=dim, n_classes=2,
                               n_train=240, n_test=80)


def mirror_perfect_run(scn: Scenario, task, rounds, master_seed, *, eta_v,
                       eta_model=0.1, local_epochs=5, grad_clip=10.0,
                       sensing_only=False):
    """Re-run the protocol round by round outside the engine.

    Perfect aggregation, one coherence block (the caller must pass
    coherence_rounds >= rounds to the engine). Returns per-round dicts
    with the state and the transmitted frames.
    """
    k_dev = scn.n_devices
    t_len = scn.pulses.length
    intervals = t_len if sensing_only else task.dim
    weights = make_weights(k_dev, None if sensing_only else task.sample_counts,
                           sensing=True, learning=not sensing_only)

    channels = sample_rayleigh_channels(derive_rng(master_seed, "channels", 0),
                                        k_dev, scn.n_rx, scn.scene.params.m_antennas)
    sol = bcd_solve(channels, weights, scn.pulses, scn.sigma2, scn.moop, scn.rho,
                    varsigma_bar2(scn.varsigma2, k_dev), init=None,
                    seed=derive_rng(master_seed, "design-init", 0))
    ctx = make_context(scn.scene, sol.precoders, t_len, scn.varsigma2)

    v_true = scn.target.as_array()
    v = scn.region.center()
    model = None if sensing_only else task.init_model()
    stats = None
    out = []
    for rnd in range(1, rounds + 1):
        if not sensing_only:
            deltas = np.stack([
                task.local_update(model, k, eta_model, local_epochs) - model
                for k in range(k_dev)
            ])
        pilot = stats is None
        if pilot:
            sense_block = derive_rng(master_seed, "sensing-pilot", rnd) \
                .standard_normal((k_dev, intervals))
        else:
            _, grads = per_device_loss_grads(stats, v, ctx)
            norms = np.linalg.norm(grads, axis=1, keepdims=True)
            grads = grads * np.minimum(1.0, grad_clip / np.maximum(norms, 1e-300))
            sense_block = grads[:, np.arange(intervals) % 3]
        raw = np.stack([sense_block] + ([] if sensing_only else [deltas]), axis=1)
        decoded = np.einsum("ki,kit->it", weights.w, raw)  # (I, intervals)

        z = np.empty_like(raw)
        for k in range(k_dev):
            for i in range(raw.shape[1]):
                z[k, i], _ = standardize(raw[k, i])
        tx = np.einsum("kmi,kit->ktm", sol.precoders.C, z) \
            * scn.pulses.pulses[:, np.arange(intervals) % t_len, None]

        if not pilot:
            for t in range(intervals):
                v[t % 3] -= eta_v * decoded[0, t]
        echo_rng = derive_rng(master_seed, "echo", rnd)
        for f in range(intervals // t_len):
            seg = tx[:, f * t_len:(f + 1) * t_len, :]
            echoes = receive_echo_frame(seg, scn.scene, v_true, echo_rng,
                                        scn.varsigma2)
            stats = [
                whiten(matched_filter(echoes[k], seg[k], scn.power_budget),
                       sol.precoders.C[k], scn.power_budget, t_len,
                       float(scn.varsigma2[k]), device=k)
                for k in range(k_dev)
            ]
        if not sensing_only:
            model = model + decoded[-1]
        out.append({
            "sensing_mse": float(np.sum((v - v_true) ** 2)),
            "task_loss": float("nan") if sensing_only else task.evaluate(model).loss,
            "tx": tx,
            "decoded": decoded,
            "v": v.copy(),
        })
    return out, sol


def test_perfect_run_tracks_mirror_exactly():
    """Both decoded streams drive the state exactly as the weighted sums say.

    The engine's noiseless aggregation must reproduce, round for round,
    an outside reconstruction of r1[t] = sum_k clip(grad_k(v))[t mod 3]
    and r2[t] = the weighted model-delta entry, to within accumulated
    rounding.
    """
    scn = small_scenario()
    task = small_task()
    rounds = 4
    logs = run_collabsensefed(scn, task, rounds, master_seed=5, eta_v=1e-3,
                              aggregation="perfect", coherence_rounds=rounds)
    mirror, _ = mirror_perfect_run(scn, task, rounds, 5, eta_v=1e-3)
    for log, ref in zip(logs, mirror):
        assert log.sensing_mse == pytest.approx(ref["sensing_mse"], rel=1e-9)
        assert log.task_loss == pytest.approx(ref["task_loss"], rel=1e-9)


def test_frame_power_matches_precoder_norm():
    """Across a run, each device's mean frame power sits on ||C_k||_F^2.

    Standardization makes every stream exactly unit-variance inside a
    round, so the per-interval power averaged over rounds must land
    within 5% of the precoder's squared Frobenius norm (cross-stream
    sample correlations average out across rounds).
    """
    scn = small_scenario()
    task = small_task()
    rounds = 12
    mirror, sol = mirror_perfect_run(scn, task, rounds, 9, eta_v=1e-3)
    k_dev = scn.n_devices
    power = np.zeros(k_dev)
    for rec in mirror:
        # Mean over intervals of ||x_k[t]||^2, accumulated over rounds.
        power += np.mean(np.sum(np.abs(rec["tx"]) ** 2, axis=2), axis=1)
    power /= rounds
    for k in range(k_dev):
        budget = np.sum(np.abs(sol.precoders.C[k]) ** 2)
        assert power[k] == pytest.approx(budget, rel=0.05)


def test_sensing_only_matches_centralized_descent():
    """Noiseless aggregation equals centralized descent on the summed loss.

    With clipping disabled, the decoded sensing stream is the gradient
    of sum_k l_k at the round-start estimate, so the engine must track
    a centralized coordinate-cycling descent to 1e-6 relative, per round.
    The per-device blocks are still rebuilt so the echo frames (and with
    them the next round's statistics) line up bit for bit.
    """
    scn = small_scenario(vs2=1e-8)
    rounds = 5
    eta = 1e-9  # raw statistic gradients are enormous; keep steps sane
    logs = run_collabsensefed(scn, None, rounds, master_seed=2, eta_v=eta,
                              tasks="sensing", aggregation="perfect",
                              grad_clip=1e30, coherence_rounds=rounds)

    # Independent centralized loop, sharing only the seed streams.
    k_dev = scn.n_devices
    t_len = scn.pulses.length
    channels = sample_rayleigh_channels(derive_rng(2, "channels", 0), k_dev,
                                        scn.n_rx, scn.scene.params.m_antennas)
    sol = bcd_solve(channels, make_weights(k_dev, None, learning=False),
                    scn.pulses, scn.sigma2, scn.moop, scn.rho,
                    varsigma_bar2(scn.varsigma2, k_dev), init=None,
                    seed=derive_rng(2, "design-init", 0))
    ctx = make_context(scn.scene, sol.precoders, t_len, scn.varsigma2)
    v_true = scn.target.as_array()
    v = scn.region.center()
    stats = None
    for rnd, log in zip(range(1, rounds + 1), logs):
        if stats is None:
            block = derive_rng(2, "sensing-pilot", rnd) \
                .standard_normal((k_dev, t_len))
        else:
            _, grads = per_device_loss_grads(stats, v, ctx)
            block = grads[:, np.arange(t_len) % 3]
            _, jgrad = joint_loss_and_grad(stats, v, ctx)  # the centralized view
            for t in range(t_len):
                v[t % 3] -= eta * jgrad[t % 3]
        z = np.empty((k_dev, t_len))
        for k in range(k_dev):
            z[k], _ = standardize(block[k])
        tx = np.einsum("km,kt->ktm", sol.precoders.C[:, :, 0], z) \
            * scn.pulses.pulses[:, :, None]
        echoes = receive_echo_frame(tx, scn.scene, v_true,
                                    derive_rng(2, "echo", rnd), scn.varsigma2)
        stats = [
            whiten(matched_filter(echoes[k], tx[k], scn.power_budget),
                   sol.precoders.C[k], scn.power_budget, t_len,
                   float(scn.varsigma2[k]), device=k)
            for k in range(k_dev)
        ]
        assert log.sensing_mse == pytest.approx(
            float(np.sum((v - v_true) ** 2)), rel=1e-6)


def test_single_epoch_perfect_step_is_weighted_gradient_step():
    """One local epoch + exact aggregation = a federated SGD step.

    delta_k = -eta_model * grad_k(model0), so after one round the global
    model must equal model0 - eta_model * sum_k w_k grad_k(model0) with
    w_k = n_k / n, verified through the loss to full precision.
    """
    scn = small_scenario()
    task = small_task()
    logs = run_collabsensefed(scn, task, 1, master_seed=3, eta_v=1e-3,
                              eta_model=0.2, local_epochs=1,
                              aggregation="perfect")
    w = np.asarray(task.sample_counts, dtype=float)
    w /= w.sum()
    model0 = task.init_model()
    grads = np.stack([task.local_gradient(model0, k) for k in range(K_SMALL)])
    expected = model0 - 0.2 * w @ grads
    assert logs[0].task_loss == pytest.approx(task.evaluate(expected).loss,
                                              rel=1e-9)


def test_first_round_pilot_leaves_estimate_unchanged():
    scn = small_scenario()
    task = small_task()
    logs = run_collabsensefed(scn, task, 2, master_seed=0, eta_v=0.02)
    start = float(np.sum((scn.region.center() - scn.target.as_array()) ** 2))
    assert logs[0].sensing_mse == start
    assert logs[1].sensing_mse != start


def test_dropping_the_sensing_stream_improves_aggregation_mse():
    """The learning stream aggregates strictly better without a co-stream."""
    for seed in (0, 1, 2):
        scn = small_scenario()
        task = small_task()
        both = run_collabsensefed(scn, task, 1, master_seed=seed, eta_v=0.02)
        alone = run_collabsensefed(scn, task, 1, master_seed=seed, eta_v=0.02,
                                   tasks="learning")
        assert alone[0].agg_mse < both[0].agg_mse


def test_single_shot_freezes_sensing_error():
    scn = small_scenario()
    task = small_task()
    logs = run_single_shot(scn, task, 6, master_seed=1, eta_v=0.02)
    errors = [log.sensing_mse for log in logs]
    assert all(e == errors[0] for e in errors)
    assert np.isfinite(errors[0])
    assert np.isfinite(logs[0].crb_l)
    assert all(np.isnan(log.crb_l) for log in logs[1:])
    assert np.isfinite(logs[-1].task_accuracy)


def test_stream_selection_controls_logged_columns():
    scn = small_scenario()
    task = small_task()
    sensing = run_collabsensefed(scn, None, 2, master_seed=0, eta_v=0.02,
                                 tasks="sensing")
    assert all(np.isnan(log.task_loss) and np.isnan(log.task_accuracy)
               for log in sensing)
    assert all(np.isfinite(log.sensing_mse) for log in sensing)
    learning = run_collabsensefed(scn, task, 2, master_seed=0, eta_v=0.02,
                                  tasks="learning")
    assert all(np.isnan(log.sensing_mse) and np.isnan(log.crb_l)
               for log in learning)
    assert all(np.isfinite(log.task_loss) for log in learning)


def test_same_seed_reruns_are_identical():
    scn = small_scenario()
    task = small_task()
    kwargs = dict(master_seed=6, eta_v=0.02)
    first = run_collabsensefed(scn, task, 3, **kwargs)
    second = run_collabsensefed(scn, task, 3, **kwargs)
    assert first == second
    third = run_collabsensefed(scn, task, 3, master_seed=7, eta_v=0.02)
    assert any(a.sensing_mse != b.sensing_mse or a.task_loss != b.task_loss
               for a, b in zip(first, third))


def test_baseline_bundle_shares_shape_and_streams():
    scn = small_scenario()
    task = small_task()
    rounds = 3
    runs = run_baselines(scn, task, rounds, master_seed=4, eta_v=0.02)
    assert set(runs) == set(BASELINES)
    for name, logs in runs.items():
        assert len(logs) == rounds
        assert [log.round for log in logs] == [1, 2, 3]
    assert all(np.isnan(log.sensing_mse) for log in runs["perfect_feel"])
    assert all(log.agg_mse == 0.0 for log in runs["perfect_feel"])
    assert all(np.isnan(log.sensing_mse) for log in runs["ota_feel"])
    assert all(log.agg_mse > 0 for log in runs["ota_feel"])
    assert all(np.isfinite(log.sensing_mse) for log in runs["collabsensefed"])
    with pytest.raises(ParameterError):
        run_baselines(scn, task, 1, baselines=("nonsense",))


def test_parameter_validation():
    scn = small_scenario()
    task = small_task()
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, aggregation="psychic")
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, tasks="everything")
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 0)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, eta_v=0.0)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, grad_clip=-1.0)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, coherence_rounds=0)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, None, 1)  # learning needs a task
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, v_init=np.zeros(2))
    wrong_k = make_synthetic_task(0, K_SMALL + 1, 0.4, dim=8, n_classes=2,
                                  n_train=240, n_test=80)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, wrong_k, 1)
    # 10 = 2 * (4 + 1) entries cannot be cut into length-4 frames.
    ragged = make_synthetic_task(0, K_SMALL, 0.4, dim=10, n_classes=2,
                                 n_train=240, n_test=80)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, ragged, 1)


def test_schedule_must_fit_the_stream_count():
    scn = small_scenario()
    task = small_task()
    channels = sample_rayleigh_channels(derive_rng(0, "channels", 0), K_SMALL,
                                        scn.n_rx, scn.scene.params.m_antennas)
    lone = bcd_solve(channels, make_weights(K_SMALL, None, learning=False),
                     scn.pulses, scn.sigma2, scn.moop, scn.rho,
                     varsigma_bar2(scn.varsigma2, K_SMALL), seed=0)
    with pytest.raises(ParameterError):
        run_collabsensefed(scn, task, 1, schedule=lone)
