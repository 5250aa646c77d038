"""
.. _controller:

Controlling the Tool Tip Through the Latent Space
=================================================

To move the tool tip to ``x_tool_ref`` while keeping the center of gravity over
the middle of the feet, the controller does not invert any kinematic model.
Instead it searches the latent space of the trained network:

1. Encode a reference observation that carries the commanded COG and tool tip
   (mask ``0110``) together with the current parametric bias. This gives the
   starting latent vector ``z``.
2. Decode ``z`` into a full predicted state and score it::

       L = |x_tool_pred - x_tool_ref| + alpha * |x_cog_pred - x_cog_ref|

   optionally adding weighted distances of the predicted angles to the
   current ones and of the predicted pixel position to a screen target.
3. Backpropagate ``L`` through the decoder to get ``dL/dz`` and try 30 step
   sizes spread exponentially up to ``gamma_max`` (plus a zero step). Keep the
   best candidate, repeat for 30 epochs.
4. Decode the final ``z``; its joint angles are the command.

Because the parametric bias enters the encoding, the same target produces
different commands for a light and a heavy tool: the network already knows
how much the arm will sag.

>>> import flexbody as fb
>>> bundle = fb.load_bundle("real_bundle.npz")
>>> target = fb.ControlTarget(x_tool_ref=[400, 0, 280])
>>> result = fb.solve(bundle, target, bundle.pb_of("Long/Middle"), model=model)
>>> result.theta_cmd
>>> result.loss_trace[:3]

:func:`geometric_ik` is the classical baseline: damped least squares on the
rigid model, tip first and COG centering in the null space.
"""

__all__ = [
    "ControlConfig",
    "ControlResult",
    "ControlTarget",
    "control_loss",
    "execute",
    "gamma_grid",
    "geometric_ik",
    "reference_latent",
    "solve",
]

import logging
from dataclasses import dataclass, field

import numpy as np

from flexbody import net
from flexbody._errors import ConfigurationError, InstabilityError
from flexbody.sim import (
    StateSample,
    center_of_gravity,
    cog_is_supported,
    deflected_angles,
    forward_kinematics,
    project_to_screen,
    rigid_model,
)
from flexbody.wtnpb import ModalityMask, decode, encode

_THETA, _COG, _TOOL, _SCREEN = slice(0, 4), slice(4, 6), slice(6, 9), slice(9, 11)


@dataclass(frozen=True, eq=False)
class ControlTarget:
    x_tool_ref: np.ndarray
    x_cog_ref: np.ndarray = (0.0, 0.0)
    s_tool_ref: np.ndarray = None
    theta_cur: np.ndarray = None

    def __post_init__(self):
        for name, size in [
            ("x_tool_ref", 3),
            ("x_cog_ref", 2),
            ("s_tool_ref", 2),
            ("theta_cur", 4),
        ]:
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.shape != (size,):
                raise ValueError(f"{name} must have {size} values, got {value.shape}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class ControlConfig:
    alpha: float = 0.01
    gamma_max: float = 0.1
    gamma_min: float = 1e-4
    n_batch: int = 30
    n_epoch: int = 30
    theta_weight: float = 0.0
    screen_weight: float = 0.0
    init_mask: str = "0110"

    def __post_init__(self):
        if self.alpha < 0 or self.theta_weight < 0 or self.screen_weight < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ConfigurationError("need 0 < gamma_min < gamma_max")
        if self.n_batch < 2 or self.n_epoch < 0:
            raise ConfigurationError("need n_batch >= 2 and n_epoch >= 0")

    @classmethod
    def from_config(cls, config, **overrides):
        section = dict(config.get("control", {}))
        section.update(overrides)
        return cls(**section)


@dataclass
class ControlResult:
    theta_cmd: np.ndarray
    z: np.ndarray
    loss_trace: list = field(default_factory=list)
    prediction: np.ndarray = None
    initial_loss: float = None


def gamma_grid(cfg=None):
    """The `n_batch` step sizes, exponentially spaced from `gamma_min` to `gamma_max`."""
    cfg = ControlConfig() if cfg is None else cfg
    return np.geomspace(cfg.gamma_min, cfg.gamma_max, cfg.n_batch)


def _distance_terms(prediction, target, cfg):
    # (block, reference, weight) for every active term
    terms = [(_TOOL, target.x_tool_ref, 1.0), (_COG, target.x_cog_ref, cfg.alpha)]
    if target.theta_cur is not None and cfg.theta_weight > 0:
        terms.append((_THETA, target.theta_cur, cfg.theta_weight))
    if target.s_tool_ref is not None and cfg.screen_weight > 0:
        terms.append((_SCREEN, target.s_tool_ref, cfg.screen_weight))
    loss = np.zeros(len(prediction))
    grad = np.zeros_like(prediction)
    for block, reference, weight in terms:
        diff = prediction[:, block] - reference
        norm = np.linalg.norm(diff, axis=1)
        loss += weight * norm
        safe = np.where(norm > 0, norm, 1.0)
        grad[:, block] = np.where(norm[:, None] > 0, weight * diff / safe[:, None], 0.0)
    return loss, grad


def _batch_loss(bundle, Z, target, cfg):
    out, trace = net.forward(bundle.stack, np.atleast_2d(Z), bundle.bottleneck)
    prediction = bundle.normalizer.denormalize(out)
    loss, grad_pred = _distance_terms(prediction, target, cfg)
    grads = net.backward(bundle.stack, trace, grad_pred * bundle.normalizer.std)
    return loss, grads.input, prediction


def control_loss(bundle, z, target, cfg=None):
    """Loss of latent vector `z` for `target` and its gradient.

    Parameters
    ----------
    bundle : ModelBundle
      The trained network.
    z : numpy.ndarray
      A latent vector.
    target : ControlTarget
      Commanded tool tip, COG and the optional angle and screen references.
    cfg : ControlConfig, optional
      Term weights.

    Returns
    -------
    loss : float
      In physical units (mm dominated).
    grad : numpy.ndarray
      ``dL/dz``, zero for a term whose distance is exactly zero.
    """
    cfg = ControlConfig() if cfg is None else cfg
    loss, grad, _ = _batch_loss(bundle, z, target, cfg)
    return float(loss[0]), grad[0]


def reference_latent(bundle, target, p, cfg=None):
    """Starting latent vector: the encoded reference COG and tool tip."""
    cfg = ControlConfig() if cfg is None else cfg
    mask = ModalityMask.from_string(cfg.init_mask)
    if mask not in bundle.masks:
        raise ConfigurationError(
            f"initialization mask {mask} is not in the bundle's feasible set",
            init_mask=str(mask),
        )
    vector = bundle.normalizer.mean.copy()
    vector[_COG] = target.x_cog_ref
    vector[_TOOL] = target.x_tool_ref
    if target.theta_cur is not None:
        vector[_THETA] = target.theta_cur
    if target.s_tool_ref is not None:
        vector[_SCREEN] = target.s_tool_ref
    return encode(bundle, StateSample.from_vector(vector), mask, np.asarray(p, float))


def solve(bundle, target, p, cfg=None, model=None):
    """Find joint angles that bring the tool tip to `target`.

    Parameters
    ----------
    bundle : ModelBundle
      The trained network.
    target : ControlTarget
      What to reach.
    p : numpy.ndarray
      Parametric bias of the grasped tool, trained or estimated online.
    cfg : ControlConfig, optional
      Loss weights, step-size grid and number of epochs.
    model : RobotModel, optional
      When given, the command is clipped to its joint ranges.

    Returns
    -------
    result : ControlResult
      The command, final latent vector, best loss of every epoch (never
      increasing) and the full decoded prediction.
    """
    cfg = ControlConfig() if cfg is None else cfg
    gammas = np.concatenate([[0.0], gamma_grid(cfg)])
    z = reference_latent(bundle, target, p, cfg)
    best, grad = control_loss(bundle, z, target, cfg)
    initial = best
    trace = []
    for epoch in range(cfg.n_epoch):
        candidates = z - gammas[:, None] * grad
        losses, grads, _ = _batch_loss(bundle, candidates, target, cfg)
        k = int(np.argmin(losses))
        if losses[k] < best:
            z, best, grad = candidates[k], float(losses[k]), grads[k]
        trace.append(best)
        logging.debug(msg=f"epoch {epoch}: loss {best:.4f}, gamma {gammas[k]:.2e}")
    prediction = decode(bundle, z)
    theta_cmd = prediction[_THETA].copy()
    if model is not None:
        ranges = model.joint_ranges
        theta_cmd = np.clip(theta_cmd, ranges[:, 0], ranges[:, 1])
    return ControlResult(theta_cmd, z, trace, prediction, initial)


def _jacobian(func, theta, h=1e-4):
    columns = []
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        columns.append((func(theta + step) - func(theta - step)) / (2 * h))
    return np.column_stack(columns)


def _dls(J, error, damping):
    return np.linalg.solve(J.T @ J + damping**2 * np.eye(J.shape[1]), J.T @ error)


def geometric_ik(
    model,
    target,
    tool,
    theta0=None,
    damping=0.1,
    max_iter=200,
    tol_mm=0.01,
    max_step_deg=10.0,
):
    """Baseline inverse kinematics on the rigid version of `model`.

    Task-priority damped least squares with numerical Jacobians: the tool tip
    is the primary task, centering the COG on ``target.x_cog_ref`` is solved in
    the null space of the tip task. Angles are clipped to the joint ranges
    after every step.

    Parameters
    ----------
    model : RobotModel
      Its deflection, backlash and tip sag are ignored.
    target : ControlTarget
      Tool tip and COG references.
    tool : ToolState
      The grasped tool, for its length and weight.
    theta0 : array-like, optional
      Starting pose, ``model.reference_pose_deg`` by default.
    damping : float
      Damping of the least-squares steps.
    max_iter : int
      Iteration limit.
    tol_mm : float
      Tip error at which the solution counts as converged.
    max_step_deg : float
      Largest change of any joint per iteration.

    Returns
    -------
    theta : numpy.ndarray
      The pose with the smallest tip error seen.
    info : dict
      ``converged``, ``best_effort`` (not converged), ``tip_error_mm``,
      ``cog_error_mm`` and ``iterations``.
    """
    rigid = rigid_model(model)
    ranges = rigid.joint_ranges
    theta = np.asarray(
        rigid.reference_pose_deg if theta0 is None else theta0, dtype=float
    )
    theta = np.clip(theta, ranges[:, 0], ranges[:, 1])

    def tip(t):
        return forward_kinematics(rigid, t, tool)

    def cog(t):
        return center_of_gravity(rigid, t, tool)

    best_theta, best_error = theta.copy(), np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        error = target.x_tool_ref - tip(theta)
        tip_error = np.linalg.norm(error)
        if tip_error < best_error:
            best_theta, best_error = theta.copy(), tip_error
        if tip_error <= tol_mm:
            break
        J = _jacobian(tip, theta)
        Jc = _jacobian(cog, theta)
        primary = _dls(J, error, damping)
        null = np.eye(len(theta)) - np.linalg.pinv(J) @ J
        secondary = _dls(Jc @ null, target.x_cog_ref - cog(theta) - Jc @ primary, damping)
        step = primary + null @ secondary
        scale = max(1.0, np.abs(step).max() / max_step_deg)
        theta = np.clip(theta + step / scale, ranges[:, 0], ranges[:, 1])
    else:
        tip_error = np.linalg.norm(target.x_tool_ref - tip(theta))
        if tip_error < best_error:
            best_theta, best_error = theta.copy(), tip_error
    converged = bool(best_error <= tol_mm)
    info = {
        "converged": converged,
        "best_effort": not converged,
        "tip_error_mm": float(best_error),
        "cog_error_mm": float(np.linalg.norm(cog(best_theta) - target.x_cog_ref)),
        "iterations": iterations,
    }
    if not converged:
        logging.warning(
            msg=f"geometric IK did not reach {target.x_tool_ref.tolist()}, "
            f"best tip error {best_error:.2f} mm"
        )
    return best_theta, info


def execute(plant, theta_cmd, tool):
    """Send `theta_cmd` to `plant` and report where the tool tip and COG end up.

    Returns
    -------
    realized : dict
      ``theta_act``, ``x_tool``, ``x_cog``, ``s_tool`` and ``visible``.

    Raises
    ------
    RangeViolationError
      When a commanded angle is out of range.
    InstabilityError
      When the realized COG leaves the support polygon.
    """
    theta_act = deflected_angles(plant, theta_cmd, tool)
    x_tool = forward_kinematics(plant, theta_act, tool)
    x_cog = center_of_gravity(plant, theta_act, tool)
    if not cog_is_supported(plant, x_cog):
        raise InstabilityError(
            f"commanded pose {np.round(theta_cmd, 2).tolist()} tips the robot over",
            theta_cmd=np.asarray(theta_cmd),
            x_cog=x_cog,
        )
    s_tool, visible = project_to_screen(plant, x_tool, ankle_deg=theta_act[3])
    return {
        "theta_act": theta_act,
        "x_tool": x_tool,
        "x_cog": x_cog,
        "s_tool": s_tool,
        "visible": visible,
    }
