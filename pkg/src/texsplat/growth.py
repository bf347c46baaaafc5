"""Error-driven anisotropic texture-resolution growth.

Each splat accumulates the absolute texel gradients row- and column-wise
over a window of training steps.  Normalizing by visibility count and the
opposite axis's texel count yields per-axis pressures; an axis whose
pressure exceeds the threshold doubles its resolution (capped).  Splats
start untextured and activate once their base-attribute gradient pressure
crosses the activation threshold.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .gradients import GradientSet
from .renderer import Scene
from .texture import init_texture, resample_texture
from .validation import ShapeMismatch


class GrowthAction(enum.Enum):
    NONE = "none"
    ACTIVATE = "activate"
    GROW_U = "grow_u"
    GROW_V = "grow_v"
    GROW_BOTH = "grow_both"


@dataclass
class GrowthEvent:
    """One activation or resolution change, as logged to growth_events.csv."""

    step: int
    splat: int
    action: str
    old_dims: tuple[int, int]
    new_dims: tuple[int, int]
    pressure_u: float
    pressure_v: float


@dataclass
class GrowthLedger:
    """Windowed per-splat gradient statistics driving growth decisions.

    g_u / g_v entries track the current texture dims and reset to zero
    after every periodic check, together with the visibility counts and
    activation pressures (fully windowed statistics).
    """

    g_u: list               # list[ndarray (T_u,) | None]
    g_v: list                # list[ndarray (T_v,) | None]
    n_g: np.ndarray          # (N,) int visibility counts
    base_pressure: np.ndarray  # (N,) accumulated base-attribute gradient L1
    activated: np.ndarray    # (N,) bool
    growth_steps: np.ndarray  # (N,) int, resolution doublings applied
    last_pressures: np.ndarray = field(default=None)  # (N, 2), set by decide

    @classmethod
    def for_scene(cls, scene: Scene) -> "GrowthLedger":
        n = scene.n_splats
        ledger = cls(
            g_u=[None] * n,
            g_v=[None] * n,
            n_g=np.zeros(n, dtype=np.int64),
            base_pressure=np.zeros(n),
            activated=np.array([t is not None for t in scene.textures]),
            growth_steps=np.array([t.growth_steps if t is not None else 0
                                   for t in scene.textures], dtype=np.int64),
            last_pressures=np.zeros((n, 2)),
        )
        ledger.sync_dims(scene)
        return ledger

    def sync_dims(self, scene: Scene) -> None:
        """Size the per-axis accumulators to the scene's current textures."""
        for k, t in enumerate(scene.textures):
            if t is None:
                self.g_u[k] = None
                self.g_v[k] = None
            else:
                tu, tv = t.dims
                if self.g_u[k] is None or self.g_u[k].shape[0] != tu:
                    self.g_u[k] = np.zeros(tu)
                if self.g_v[k] is None or self.g_v[k].shape[0] != tv:
                    self.g_v[k] = np.zeros(tv)

    def reset_window(self) -> None:
        for k in range(len(self.g_u)):
            if self.g_u[k] is not None:
                self.g_u[k][:] = 0.0
                self.g_v[k][:] = 0.0
        self.n_g[:] = 0
        self.base_pressure[:] = 0.0


def accumulate(ledger: GrowthLedger, grads: GradientSet, visible: np.ndarray) -> GrowthLedger:
    """Fold one step's gradients into the ledger (mutates and returns it).

    Activated splats accumulate row/column sums of |texel gradients|;
    unactivated ones accumulate the L1 norm of their base-attribute
    gradients instead.  Visibility counts increment once per rendered
    view for splats with a blend weight above the visibility floor.
    """
    visible = np.asarray(visible, dtype=bool)
    n = ledger.n_g.shape[0]
    if visible.shape[0] != n or grads.d_means.shape[0] != n:
        raise ShapeMismatch("gradient/visibility shapes do not match the ledger")
    ledger.n_g += visible
    for k in range(n):
        if ledger.activated[k]:
            d = grads.d_texels[k]
            if d is None:
                continue
            if ledger.g_u[k] is None or d.shape[0] != ledger.g_u[k].shape[0] \
                    or d.shape[1] != ledger.g_v[k].shape[0]:
                raise ShapeMismatch(f"texel gradient shape mismatch for splat {k}")
            a = np.abs(d)
            ledger.g_u[k] += a.sum(axis=(1, 2))
            ledger.g_v[k] += a.sum(axis=(0, 2))
        else:
            ledger.base_pressure[k] += grads.base_attr_norm[k]
    return ledger


def pressures(ledger: GrowthLedger, splat: int) -> tuple[float, float]:
    """Visibility- and texel-count-normalized per-axis pressures.

    g_u_bar = sum(g_u) / (n_g * T_v), g_v_bar = sum(g_v) / (n_g * T_u);
    both zero when the splat was never visible in the window.
    """
    if ledger.n_g[splat] <= 0 or ledger.g_u[splat] is None:
        return 0.0, 0.0
    t_u = ledger.g_u[splat].shape[0]
    t_v = ledger.g_v[splat].shape[0]
    n_g = float(ledger.n_g[splat])
    return (float(ledger.g_u[splat].sum()) / (n_g * t_v),
            float(ledger.g_v[splat].sum()) / (n_g * t_u))


def decide(ledger: GrowthLedger, config) -> list:
    """Per-splat growth action for the window just ended.

    config needs tau_base, tau_tex, t_max and n_max attributes.  Window
    statistics (pressures and visibility counts) reset afterwards; the
    pressures that drove each decision stay readable in
    ledger.last_pressures for event logging.
    """
    n = ledger.n_g.shape[0]
    actions = [GrowthAction.NONE] * n
    ledger.last_pressures = np.zeros((n, 2))
    for k in range(n):
        if not ledger.activated[k]:
            if ledger.n_g[k] > 0:
                p = float(ledger.base_pressure[k]) / float(ledger.n_g[k])
                ledger.last_pressures[k, 0] = p
                if p > config.tau_base:
                    actions[k] = GrowthAction.ACTIVATE
            continue
        if ledger.growth_steps[k] >= config.n_max:
            continue
        p_u, p_v = pressures(ledger, k)
        ledger.last_pressures[k] = (p_u, p_v)
        t_u = ledger.g_u[k].shape[0]
        t_v = ledger.g_v[k].shape[0]
        grow_u = p_u > config.tau_tex and t_u < config.t_max
        grow_v = p_v > config.tau_tex and t_v < config.t_max
        if grow_u and grow_v:
            actions[k] = GrowthAction.GROW_BOTH
        elif grow_u:
            actions[k] = GrowthAction.GROW_U
        elif grow_v:
            actions[k] = GrowthAction.GROW_V
    ledger.reset_window()
    return actions


def apply_growth(scene: Scene, ledger: GrowthLedger, actions, channels: int,
                 t_max: int, step: int = 0) -> list[GrowthEvent]:
    """Realize growth actions on the scene's textures.

    Activation attaches a fresh anisotropic grid; growth doubles the
    triggered axis (capped at t_max) and resamples bilinearly, so
    rendering stays continuous.  Returns the applied events.
    """
    events = []
    for k, action in enumerate(actions):
        if action is GrowthAction.NONE:
            continue
        p_u, p_v = ledger.last_pressures[k]
        if action is GrowthAction.ACTIVATE:
            grid = init_texture(scene.splat(k), channels)
            scene.textures[k] = grid
            ledger.activated[k] = True
            events.append(GrowthEvent(step, k, action.value, (0, 0), grid.dims,
                                      float(p_u), float(p_v)))
            continue
        grid = scene.textures[k]
        t_u, t_v = grid.dims
        new_u = min(2 * t_u, t_max) if action in (GrowthAction.GROW_U, GrowthAction.GROW_BOTH) else t_u
        new_v = min(2 * t_v, t_max) if action in (GrowthAction.GROW_V, GrowthAction.GROW_BOTH) else t_v
        if (new_u, new_v) == (t_u, t_v):
            continue  # already at the cap along the triggered axis
        grown = resample_texture(grid, (new_u, new_v), t_max)
        grown.growth_steps = grid.growth_steps + 1
        scene.textures[k] = grown
        ledger.growth_steps[k] += 1
        events.append(GrowthEvent(step, k, action.value, (t_u, t_v), (new_u, new_v),
                                  float(p_u), float(p_v)))
    if events:
        ledger.sync_dims(scene)
        scene.bump()
    return events
