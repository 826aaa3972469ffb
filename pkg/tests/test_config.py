"""Config schema: parsing, key-path errors, round trips, realization."""

import dataclasses
import json

import numpy as np
import pytest

from sensefed.config import (
    ScenarioConfig,
    config_from_dict,
    config_to_dict,
    load_scenario,
    protocol_kwargs,
    realize,
    save_scenario,
)
from sensefed.errors import ParameterError


def tiny_doc() -> dict:
    """A complete document small enough to realize in milliseconds."""
    return {
        "schema_version": 1,
        "K": 4, "M": 2, "N": 6, "T": 4, "I": 2,
        "P": 1.0, "sigma2": 0.05, "varsigma2": 1e-9,
        "wavelength": 0.1, "element_spacing": 0.05, "alpha0": 1.0,
        "pulses": "dft",
        "geometry": {
            "seed": 3, "target_seed": 4,
            "ring": {"r_in": 50.0, "r_out": 100.0, "arc_deg": 20.0,
                     "arc_center_deg": 0.0},
            "region": {"r_in": 100.0, "r_out": 110.0, "arc_deg": 10.0,
                       "alt_min": 0.0, "alt_max": 3.0, "arc_center_deg": 0.0},
        },
        "solver": {"epsilon0": None, "max_outer_iters": 3, "tol_rel": 1e-3,
                   "max_inner_iters": 120, "backtrack": 0.5, "kkt_tol": 1e-3},
        "protocol": {"rounds": 2, "eta_v": 0.01, "eta_v_tau": None,
                     "eta_model": 0.1, "local_epochs": 2, "grad_clip": 10.0,
                     "coherence_rounds": 4, "dirichlet_alpha": 0.4,
                     "task_dim": 8, "n_classes": 2,
                     "n_train": 240, "n_test": 80},
        "master_seed": 0,
    }


def test_default_config_matches_reference_sizes():
    cfg = ScenarioConfig()
    assert (cfg.K, cfg.M, cfg.N) == (15, 4, 16)
    assert len(cfg.varsigma2) == cfg.K


def test_round_trip_is_identity(tmp_path):
    path = tmp_path / "cfg.json"
    save_scenario(ScenarioConfig(), path)
    loaded = load_scenario(path)
    assert loaded == ScenarioConfig()
    again = tmp_path / "again.json"
    save_scenario(loaded, again)
    assert again.read_bytes() == path.read_bytes()
    assert load_scenario(again) == loaded


def test_scalar_varsigma2_broadcasts_to_k_entries():
    cfg = config_from_dict(tiny_doc())
    assert cfg.varsigma2 == (1e-9,) * 4
    doc = tiny_doc()
    doc["varsigma2"] = [1e-9, 2e-9, 3e-9, 4e-9]
    assert config_from_dict(doc).varsigma2 == (1e-9, 2e-9, 3e-9, 4e-9)


def test_missing_required_key_names_it():
    doc = tiny_doc()
    del doc["K"]
    with pytest.raises(ParameterError, match="'K'"):
        config_from_dict(doc)


def test_errors_carry_key_paths():
    doc = tiny_doc()
    doc["solver"]["backtrack"] = 1.5
    with pytest.raises(ParameterError, match="solver"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["protocol"]["rounds"] = 0
    with pytest.raises(ParameterError, match="protocol"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["geometry"]["ring"]["r_in"] = "wide"
    with pytest.raises(ParameterError, match="geometry.ring.r_in"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["varsigma2"] = [1e-9, -1e-9, 1e-9, 1e-9]
    with pytest.raises(ParameterError, match="varsigma2"):
        config_from_dict(doc)


def test_unknown_keys_are_rejected():
    doc = tiny_doc()
    doc["Q"] = 7
    with pytest.raises(ParameterError, match="'Q'"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["protocol"]["warp_factor"] = 9
    with pytest.raises(ParameterError, match="protocol.warp_factor"):
        config_from_dict(doc)


def test_type_checks_reject_json_booleans():
    doc = tiny_doc()
    doc["K"] = True
    with pytest.raises(ParameterError, match="K"):
        config_from_dict(doc)


def test_cross_field_validation():
    doc = tiny_doc()
    doc["T"] = 3  # fewer pulses than devices
    with pytest.raises(ParameterError, match="T"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["protocol"]["task_dim"] = 10  # not a multiple of T=4
    with pytest.raises(ParameterError, match="task_dim"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["I"] = 3
    with pytest.raises(ParameterError, match="I"):
        config_from_dict(doc)
    doc = tiny_doc()
    doc["schema_version"] = 2
    with pytest.raises(ParameterError, match="schema_version"):
        config_from_dict(doc)


def test_malformed_files_are_config_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ParameterError, match="nope.json"):
        load_scenario(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParameterError, match="bad.json"):
        load_scenario(bad)


def test_realize_builds_consistent_world():
    cfg = config_from_dict(tiny_doc())
    scenario, task = realize(cfg)
    assert scenario.n_devices == cfg.K
    assert scenario.pulses.length == cfg.T
    assert task.n_devices == cfg.K
    assert task.dim == cfg.protocol.task_dim
    assert scenario.moop.epsilon0 > 0  # auto ceiling was resolved
    kwargs = protocol_kwargs(cfg)
    assert kwargs["tasks"] == "both"
    assert kwargs["eta_v"] == cfg.protocol.eta_v


def test_pinned_geometry_is_stable_across_master_seeds():
    cfg = config_from_dict(tiny_doc())
    a, task_a = realize(cfg, master_seed=0)
    b, task_b = realize(cfg, master_seed=1)
    np.testing.assert_array_equal(a.scene.devices.positions,
                                  b.scene.devices.positions)
    assert a.target == b.target
    # The data split does follow the master seed.
    assert any(na != nb for na, nb in
               zip(task_a.sample_counts, task_b.sample_counts)) or \
        not np.array_equal(task_a.train_x, task_b.train_x)


def test_derived_geometry_follows_master_seed():
    doc = tiny_doc()
    doc["geometry"]["seed"] = None
    doc["geometry"]["target_seed"] = None
    # Unpinned placements can land anywhere in the ring, so keep the ring
    # clear of the region's range guard.
    doc["geometry"]["ring"]["r_out"] = 90.0
    cfg = config_from_dict(doc)
    a, _ = realize(cfg, master_seed=0)
    b, _ = realize(cfg, master_seed=1)
    assert not np.array_equal(a.scene.devices.positions,
                              b.scene.devices.positions)
    same, _ = realize(cfg, master_seed=0)
    np.testing.assert_array_equal(a.scene.devices.positions,
                                  same.scene.devices.positions)
    assert a.target == same.target


def test_config_to_dict_inverts_from_dict():
    doc = tiny_doc()
    cfg = config_from_dict(doc)
    assert config_from_dict(config_to_dict(cfg)) == cfg
    replaced = dataclasses.replace(cfg, master_seed=9)
    assert config_from_dict(config_to_dict(replaced)) == replaced


def test_saved_document_is_plain_json(tmp_path):
    path = tmp_path / "cfg.json"
    save_scenario(config_from_dict(tiny_doc()), path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["schema_version"] == 1
    assert doc["K"] == 4
    assert isinstance(doc["varsigma2"], list)
