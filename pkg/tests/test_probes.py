import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpc.envs import BackgroundSource, EnvConfig
from tpc.harness.probes import (
    ProbeDataset,
    collect_probe_dataset,
    encoder_fn,
    fit_linear,
    image_grid,
    linear_gaussian_mi,
    mi_oracle_check,
    probe_linear_latents,
    probe_reconstruction_latents,
    r2_scores,
    region_errors,
    run_probes,
    stationary_covariance,
    state_targets,
    write_pgm,
)
from tpc.world_model import WorldModel, WorldModelConfig


@pytest.fixture(scope="module")
def pointmass_data():
    cfg = EnvConfig(task="pointmass_lite", episode_length=60, background=BackgroundSource(kind="random_per_step"))
    return collect_probe_dataset(cfg, 8, seed=0)


def test_dataset_layout(pointmass_data):
    d = pointmass_data
    n = len(d)
    assert d.obs.shape == (n, 1, 16, 16)
    assert d.states.shape == (n, 6) and d.masks.shape == (n, 16, 16)
    assert len(np.unique(d.episode)) == 8
    train, test = d.split(0.25)
    assert not (train & test).any() and (train | test).all()
    assert not set(d.episode[train]) & set(d.episode[test])


def test_identity_latents_give_perfect_r2(pointmass_data):
    y, _ = state_targets(pointmass_data.states)
    r2, ridge = probe_linear_latents(y, pointmass_data)
    assert not ridge
    for name in ("x", "y", "vx", "vy"):
        assert r2[name] == pytest.approx(1.0, abs=1e-9)


def test_noise_latents_give_no_held_out_r2():
    rng = np.random.default_rng(0)
    scores = []
    for seed in range(20):
        n = 400
        states = rng.standard_normal((n, 2))
        d = ProbeDataset(np.zeros((n, 1, 8, 8)), states, np.zeros((n, 8, 8), bool), np.repeat(np.arange(10), 40),
                         ("a", "b"))
        r2, _ = probe_linear_latents(rng.standard_normal((n, 5)), d)
        scores += list(r2.values())
    assert np.mean(scores) <= 0.05


def test_collapsed_latents_score_zero(pointmass_data):
    z = np.zeros((len(pointmass_data), 4))
    r2, ridge = probe_linear_latents(z, pointmass_data)
    assert ridge
    assert max(r2.values()) == pytest.approx(0.0, abs=1e-9)


def test_ridge_fallback_on_duplicate_columns():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2))
    x = np.c_[x, x[:, 0]]
    y = x[:, :1] * 2.0
    fit = fit_linear(x, y)
    assert fit.ridge
    np.testing.assert_allclose(fit.predict(x), y, atol=1e-5)


def test_angle_featurization():
    y, labels = state_targets(np.array([[0.5, 2.0]]), angle_dims=(0,), names=("theta", "theta_dot"))
    assert labels == ("sin_theta", "cos_theta", "theta_dot")
    np.testing.assert_allclose(y[0], [math.sin(0.5), math.cos(0.5), 2.0])


def test_r2_constant_column_is_zero():
    r2 = r2_scores(np.ones((5, 1)), np.zeros((5, 1)), np.ones(1))
    assert r2[0] == 0.0


def test_region_errors_partition():
    obs = np.zeros((2, 1, 4, 4))
    recon = np.zeros((2, 1, 4, 4))
    masks = np.zeros((2, 4, 4), bool)
    masks[:, 0, 0] = True
    recon[:, 0, 0, 0] = 1.0
    recon[:, 0, 3, 3] = 0.5
    agent, bg = region_errors(recon, obs, masks)
    assert agent == 1.0
    assert bg == pytest.approx(0.25 / 15)


def test_reconstruction_probe_is_reproducible(pointmass_data):
    z = state_targets(pointmass_data.states)[0]
    a = probe_reconstruction_latents(z, pointmass_data, np.random.default_rng(0), steps=50)
    b = probe_reconstruction_latents(z, pointmass_data, np.random.default_rng(0), steps=50)
    assert a.agent_mse == b.agent_mse and a.background_mse == b.background_mse


def test_probes_do_not_touch_world_model(pointmass_data):
    wm = WorldModel(WorldModelConfig(obs_shape=(1, 16, 16), action_dim=2, encoder_units=(16,)), np.random.default_rng(0))
    before = {k: v.copy() for k, v in wm.state_dict().items()}
    report, rec = run_probes(encoder_fn(wm), pointmass_data, np.random.default_rng(0), steps=20)
    for k, v in wm.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    assert set(report.to_dict()) >= {"agent_mse", "background_mse", "r2", "latent_std", "probe_r2_mean"}
    assert report.background_variance > 0


def test_image_grid_has_two_rows(tmp_path):
    truth = np.zeros((3, 1, 4, 4))
    recon = np.ones((3, 1, 4, 4))
    grid = image_grid(truth, recon)
    assert grid.shape == (2 * 4 + 3, 3 * 5 + 1)
    assert grid[1:5, 1:5].max() == 0.0 and grid[6:10, 1:5].min() == 1.0
    path = tmp_path / "g.pgm"
    write_pgm(path, grid, scale=2)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n")
    assert raw.split(b"\n")[1] == f"{grid.shape[1] * 2} {grid.shape[0] * 2}".encode()


# -- mutual-information oracle ----------------------------------------------

def test_closed_form_mi_value():
    # scalar case: Var = 1 / (1 - a^2), so I = -0.5 ln(1 - a^2)
    assert linear_gaussian_mi(0.9) == pytest.approx(-0.5 * math.log(1 - 0.81), abs=1e-12)
    assert linear_gaussian_mi(0.9) == pytest.approx(0.8304, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_stationary_covariance_fixed_point(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 3))
    a *= 0.9 / max(np.abs(np.linalg.eigvals(a)))
    q = np.eye(3) * rng.uniform(0.1, 2)
    s = stationary_covariance(a, q)
    np.testing.assert_allclose(a @ s @ a.T + q, s, atol=1e-9)


def test_unstable_dynamics_rejected():
    with pytest.raises(ValueError):
        stationary_covariance(1.1, 1.0)


def test_independent_process_estimates_zero():
    r = mi_oracle_check(a=0.0, batch_size=16, n_batches=2000, rng=np.random.default_rng(0))
    assert r.closed_form_mi == 0.0
    assert abs(r.estimate) < 3 * r.stderr + 0.01


def test_estimate_respects_ceiling_and_bound():
    for b in (4, 16, 64):
        r = mi_oracle_check(0.9, b, 500, np.random.default_rng(b))
        assert r.bound_ok
        assert r.estimate <= math.log(b) + 1e-12
