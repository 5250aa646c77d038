import numpy as np
import pytest

from flexbody import (
    BASE_MASKS,
    ConfigurationError,
    ControlConfig,
    ControlTarget,
    InstabilityError,
    NoiseSpec,
    control_loss,
    decode,
    execute,
    forward_kinematics,
    gamma_grid,
    geometric_ik,
    observe,
    reference_latent,
    rigid_model,
    solve,
    tool_state,
)

long_heavy = tool_state("Long/Heavy")


@pytest.fixture
def target():
    return ControlTarget(x_tool_ref=[300.0, 20.0, 250.0])


def test_gamma_grid():
    gammas = gamma_grid()
    assert len(gammas) == 30
    assert np.all(np.diff(gammas) > 0)
    assert gammas[0] == pytest.approx(1e-4)
    assert gammas[-1] == pytest.approx(0.1)
    ratios = gammas[1:] / gammas[:-1]
    assert ratios == pytest.approx(np.full(29, ratios[0]))


def test_control_config_from_config(small_config):
    cfg = ControlConfig.from_config(small_config)
    assert cfg.n_epoch == 5
    assert cfg.alpha == 0.01
    assert ControlConfig.from_config(small_config, alpha=0.5).alpha == 0.5


@pytest.mark.parametrize(
    "kwargs", [{"alpha": -1.0}, {"gamma_min": 0.5}, {"n_batch": 1}, {"n_epoch": -1}]
)
def test_control_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ControlConfig(**kwargs)


def test_target_shapes():
    target = ControlTarget(x_tool_ref=[1, 2, 3])
    assert target.x_cog_ref.tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        ControlTarget(x_tool_ref=[1, 2])


def test_loss_vanishes_at_decoded_state(bundle):
    z = np.random.default_rng(0).normal(size=bundle.latent_dim)
    prediction = decode(bundle, z)
    target = ControlTarget(x_tool_ref=prediction[6:9], x_cog_ref=prediction[4:6])
    loss, _ = control_loss(bundle, z, target)
    assert loss == pytest.approx(0.0, abs=1e-8)


def test_cog_term_ignored_without_alpha(bundle):
    z = np.random.default_rng(1).normal(size=bundle.latent_dim)
    cfg = ControlConfig(alpha=0.0)
    a = ControlTarget(x_tool_ref=[300, 0, 250], x_cog_ref=[0, 0])
    b = ControlTarget(x_tool_ref=[300, 0, 250], x_cog_ref=[40, -30])
    assert control_loss(bundle, z, a, cfg)[0] == control_loss(bundle, z, b, cfg)[0]
    assert control_loss(bundle, z, a)[0] != control_loss(bundle, z, b)[0]


@pytest.mark.parametrize("seed", range(100))
def test_loss_gradient_matches_finite_differences(trained, seed):
    bundle = trained[0]
    rng = np.random.default_rng(seed)
    target = ControlTarget(
        x_tool_ref=rng.uniform([200, -60, 150], [400, 60, 400]),
        x_cog_ref=rng.uniform(-20, 20, size=2),
        s_tool_ref=rng.uniform([100, 100], [500, 400]),
        theta_cur=rng.uniform([0, -20, 0, -10], [90, 20, 90, 10]),
    )
    cfg = ControlConfig(
        alpha=rng.uniform(0, 1),
        theta_weight=rng.uniform(0, 1),
        screen_weight=rng.uniform(0, 1),
    )
    h = 1e-5
    z = rng.normal(size=bundle.latent_dim)
    _, grad = control_loss(bundle, z, target, cfg)
    numeric = np.zeros_like(z)
    for i in range(len(z)):
        step = np.zeros_like(z)
        step[i] = h
        plus, _ = control_loss(bundle, z + step, target, cfg)
        minus, _ = control_loss(bundle, z - step, target, cfg)
        numeric[i] = (plus - minus) / (2 * h)
    error = np.linalg.norm(grad - numeric) / np.linalg.norm(numeric)
    assert error <= 1e-5


def test_zero_epochs_decodes_reference_latent(bundle, target):
    p = bundle.pb_of("Long/Heavy")
    cfg = ControlConfig(n_epoch=0)
    result = solve(bundle, target, p, cfg)
    z0 = reference_latent(bundle, target, p, cfg)
    assert result.loss_trace == []
    assert np.array_equal(result.z, z0)
    assert result.theta_cmd == pytest.approx(decode(bundle, z0)[:4])


def test_loss_trace_never_increases(bundle, target):
    result = solve(bundle, target, bundle.pb_of("Long/Heavy"), ControlConfig(n_epoch=10))
    trace = np.array(result.loss_trace)
    assert len(trace) == 10
    assert trace[0] <= result.initial_loss
    assert np.all(np.diff(trace) <= 0)


def test_pb_changes_the_command(bundle, target):
    light = solve(bundle, target, bundle.pb_of("Short/Light"), ControlConfig(n_epoch=3))
    heavy = solve(bundle, target, bundle.pb_of("Long/Heavy"), ControlConfig(n_epoch=3))
    assert not np.allclose(light.theta_cmd, heavy.theta_cmd)


def test_init_mask_must_be_trained(bundle, target):
    bundle.masks = BASE_MASKS
    with pytest.raises(ConfigurationError) as excinfo:
        solve(bundle, target, np.zeros(2))
    assert excinfo.value.details["init_mask"] == "0110"
    assert solve(bundle, target, np.zeros(2), ControlConfig(init_mask="1100", n_epoch=1))


def test_command_is_clipped_to_joint_ranges(model, bundle):
    far = ControlTarget(x_tool_ref=[2000.0, 0.0, -500.0])
    result = solve(bundle, far, np.zeros(2), ControlConfig(n_epoch=5), model=model)
    ranges = model.joint_ranges
    assert np.all(result.theta_cmd >= ranges[:, 0])
    assert np.all(result.theta_cmd <= ranges[:, 1])


def test_geometric_ik_reaches_reachable_target(model):
    pose = np.array([60.0, 10.0, 40.0, -5.0])
    tip = forward_kinematics(rigid_model(model), pose, long_heavy)
    theta, info = geometric_ik(
        model, ControlTarget(x_tool_ref=tip), long_heavy, theta0=[55, 5, 45, -3]
    )
    assert info["converged"]
    assert not info["best_effort"]
    assert info["tip_error_mm"] < 0.1
    assert np.linalg.norm(forward_kinematics(rigid_model(model), theta, long_heavy) - tip) < 0.1


def test_geometric_ik_best_effort(model):
    theta, info = geometric_ik(
        model, ControlTarget(x_tool_ref=[2000.0, 0.0, 0.0]), long_heavy, max_iter=50
    )
    assert info["best_effort"]
    assert not info["converged"]
    assert info["tip_error_mm"] > 1000
    ranges = model.joint_ranges
    assert np.all((theta >= ranges[:, 0]) & (theta <= ranges[:, 1]))


def test_execute_matches_observation(model):
    pose = [45.0, 0.0, 45.0, -5.0]
    realized = execute(model, pose, long_heavy)
    sample = observe(model, pose, long_heavy, noise=NoiseSpec.zero())
    assert realized["visible"]
    assert realized["x_tool"] == pytest.approx(sample.x_tool, abs=1e-6)
    assert realized["x_cog"] == pytest.approx(sample.x_cog, abs=1e-6)
    assert realized["s_tool"] == pytest.approx(sample.s_tool, abs=1e-6)


def test_execute_detects_tipping(model):
    with pytest.raises(InstabilityError):
        execute(model, [90.0, 0.0, 0.0, 15.0], long_heavy)
