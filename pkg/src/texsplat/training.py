"""Optimization loop: photometric loss, Adam, and growth orchestration.

Each step renders one (seed-chosen) view, backpropagates the photometric
loss, applies Adam per parameter group, folds the gradients into the
growth ledger and, at window boundaries, lets the growth controller
activate or enlarge textures.  Every phase runs at a barrier, so renders
never observe in-flight mutations and runs are deterministic for a given
seed regardless of the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Camera
from .gradients import GradientSet, NonFiniteGradient, backward
from .growth import GrowthLedger, accumulate, apply_growth, decide
from .losses import photometric_loss, psnr, ssim
from .renderer import Scene, render
from .texture import TexelGrid, WarpMode, resample_texture

DEFAULT_LR = {
    "means": 1.6e-4,
    "rotations": 1e-3,
    "log_scales": 5e-3,
    "opacity_logits": 5e-2,
    "base_colors": 2.5e-3,
    "texels": 2.5e-3,
}

_BASE_GROUPS = ("means", "rotations", "log_scales", "opacity_logits", "base_colors")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run (JSON-serializable)."""

    lambda_ssim: float = 0.2
    total_steps: int = 2000
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    tau_base: float = 4e-6
    tau_tex: float = 2e-7
    n_tex_interval: int = 100
    growth_stop_step: int | None = None   # None -> total_steps // 4
    n_max: int = 6
    t_max: int = 8
    warp_mode: str = "axis"
    channels: str = "rgb"
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must be in [0, 1]")
        if self.tau_base <= 0 or self.tau_tex <= 0:
            raise ValueError("growth thresholds must be positive")
        if self.t_max < 1 or self.n_tex_interval < 1 or self.eval_every < 1:
            raise ValueError("t_max and intervals must be >= 1")
        lr = dict(DEFAULT_LR)
        lr.update(self.lr or {})
        unknown = set(lr) - set(DEFAULT_LR)
        if unknown:
            raise ValueError(f"unknown learning-rate groups: {sorted(unknown)}")
        self.lr = lr
        WarpMode.parse(self.warp_mode)
        if self.channels not in ("rgb", "rgba"):
            raise ValueError("channels must be 'rgb' or 'rgba'")

    @property
    def mode(self) -> WarpMode:
        return WarpMode.parse(self.warp_mode)

    @property
    def n_channels(self) -> int:
        return 3 if self.channels == "rgb" else 4

    def resolved_growth_stop(self) -> int:
        if self.growth_stop_step is not None:
            return int(self.growth_stop_step)
        return self.total_steps // 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moments per named parameter array plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def register(self, name: str, shape) -> None:
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)

    def drop(self, name: str) -> None:
        self.m.pop(name, None)
        self.v.pop(name, None)

    @classmethod
    def for_scene(cls, scene: Scene) -> "AdamState":
        state = cls()
        for name in _BASE_GROUPS:
            state.register(name, getattr(scene, name).shape)
        state.register("texels", (scene.texel_scalars(),))
        return state

    def resample_texture_moments(self, splat: int, texels_m: np.ndarray,
                                 texels_v: np.ndarray, new_dims: tuple[int, int],
                                 t_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Moments track texel geometry: same bilinear operator as the texels."""
        return (resample_texture(TexelGrid(texels_m), new_dims, t_max).texels,
                resample_texture(TexelGrid(texels_v), new_dims, t_max).texels)


def adam_step(params: dict, grads: dict, state: AdamState, lr_table: dict,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-15) -> None:
    """One Adam update applied in place to every array in params.

    lr_table maps group names to rates; texel entries named "texels/<k>"
    use the "texels" rate.  Shared step count t gives the usual bias
    correction.
    """
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        lr = lr_table[name.split("/")[0]]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    scene: Scene
    metrics: list          # list[dict] rows
    growth_events: list    # list[GrowthEvent]
    ledger: GrowthLedger
    adam: AdamState
    config: TrainConfig


class _TexelPack:
    """Packed texel parameter buffer whose per-splat grids are views into it.

    Packing lets the optimizer update every texel in one array op; the
    scene's TexelGrid objects stay the source of truth for shapes and are
    rebound to slices of the buffer after every rebuild.
    """

    def __init__(self, scene: Scene):
        self.rebind(scene)

    def rebind(self, scene: Scene) -> None:
        chunks = []
        self.slices = []  # (splat, offset, shape)
        total = 0
        for k, t in enumerate(scene.textures):
            if t is None:
                continue
            self.slices.append((k, total, t.texels.shape))
            total += t.texels.size
            chunks.append(t.texels.ravel())
        self.packed = np.concatenate(chunks) if chunks else np.zeros(0)
        for k, off, shape in self.slices:
            size = int(np.prod(shape))
            scene.textures[k].texels = self.packed[off:off + size].reshape(shape)

    def pack_grads(self, grads: GradientSet) -> np.ndarray:
        if not self.slices:
            return np.zeros(0)
        return np.concatenate([grads.d_texels[k].ravel() for k, _, _ in self.slices])

    def moment_blocks(self, moments: np.ndarray) -> dict:
        out = {}
        for k, off, shape in self.slices:
            size = int(np.prod(shape))
            out[k] = moments[off:off + size].reshape(shape).copy()
        return out


def _rebuild_after_growth(scene: Scene, pack: _TexelPack, adam: AdamState,
                          events, t_max: int) -> None:
    """Repack texels and carry optimizer moments across growth events."""
    m_blocks = pack.moment_blocks(adam.m["texels"])
    v_blocks = pack.moment_blocks(adam.v["texels"])
    for ev in events:
        if ev.action == "activate":
            shape = scene.textures[ev.splat].texels.shape
            m_blocks[ev.splat] = np.zeros(shape)
            v_blocks[ev.splat] = np.zeros(shape)
        else:
            m_blocks[ev.splat], v_blocks[ev.splat] = adam.resample_texture_moments(
                ev.splat, m_blocks[ev.splat], v_blocks[ev.splat], ev.new_dims, t_max)
    pack.rebind(scene)
    order = [k for k, _, _ in pack.slices]
    if order:
        adam.m["texels"] = np.concatenate([m_blocks[k].ravel() for k in order])
        adam.v["texels"] = np.concatenate([v_blocks[k].ravel() for k in order])
    else:
        adam.register("texels", (0,))


def _gather_params(scene: Scene, pack: _TexelPack) -> dict:
    params = {name: getattr(scene, name) for name in _BASE_GROUPS}
    params["texels"] = pack.packed
    return params


def _gather_grads(grads: GradientSet, pack: _TexelPack) -> dict:
    return {
        "means": grads.d_means,
        "rotations": grads.d_rotations,
        "log_scales": grads.d_log_scales,
        "opacity_logits": grads.d_opacity_logits,
        "base_colors": grads.d_base_colors,
        "texels": pack.pack_grads(grads),
    }


def evaluate(scene: Scene, dataset, mode: WarpMode, background=(0.0, 0.0, 0.0),
             n_workers: int | None = None) -> tuple[float, float]:
    """Mean PSNR and SSIM of inference renders over the dataset."""
    psnrs = []
    ssims = []
    for cam, target in dataset:
        img = render(scene, cam, mode, background=background, keep_tape=False,
                     n_workers=n_workers).image
        psnrs.append(psnr(img, target))
        ssims.append(ssim(img, target))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def train(scene: Scene, dataset, config: TrainConfig,
          n_workers: int | None = None, eval_callback=None) -> TrainResult:
    """Fit the scene to the dataset of (camera, target image) pairs.

    Deterministic for a fixed seed and any worker count.  Growth checks
    run every n_tex_interval steps until the resolved stop step; metrics
    rows are emitted every eval_every steps and at the final step.
    """
    if not dataset:
        raise ValueError("dataset must contain at least one view")
    scene = scene.copy()
    scene.normalize_rotations()
    mode = config.mode
    rng = np.random.default_rng(config.seed)
    ledger = GrowthLedger.for_scene(scene)
    adam = AdamState.for_scene(scene)
    pack = _TexelPack(scene)
    growth_stop = config.resolved_growth_stop()

    metrics: list[dict] = []
    events: list = []

    def emit(step: int, loss: float) -> None:
        mean_psnr, mean_ssim = evaluate(scene, dataset, mode, n_workers=n_workers)
        metrics.append({
            "step": step,
            "loss": loss,
            "psnr": mean_psnr,
            "ssim": mean_ssim,
            "texel_count": scene.texel_scalars(),
            "active_textures": scene.active_textures(),
            "growth_events": len(events),
        })
        if eval_callback is not None:
            eval_callback(step, scene)

    for step in range(1, config.total_steps + 1):
        cam, target = dataset[int(rng.integers(len(dataset)))]

        out = render(scene, cam, mode, keep_tape=True, n_workers=n_workers)
        loss, d_img = photometric_loss(out.image, target, config.lambda_ssim)
        try:
            grads = backward(scene, cam, mode, out, d_img)
        except NonFiniteGradient as err:
            raise NonFiniteGradient(f"step {step}: {err}") from err

        adam_step(_gather_params(scene, pack), _gather_grads(grads, pack),
                  adam, config.lr)
        scene.normalize_rotations()
        scene.bump()

        accumulate(ledger, grads, grads.visible)

        if step % config.n_tex_interval == 0 and step <= growth_stop:
            actions = decide(ledger, config)
            new_events = apply_growth(scene, ledger, actions, config.n_channels,
                                      config.t_max, step=step)
            if new_events:
                _rebuild_after_growth(scene, pack, adam, new_events, config.t_max)
            events.extend(new_events)

        if step % config.eval_every == 0 or step == config.total_steps:
            emit(step, loss)

    return TrainResult(scene=scene, metrics=metrics, growth_events=events,
                       ledger=ledger, adam=adam, config=config)
