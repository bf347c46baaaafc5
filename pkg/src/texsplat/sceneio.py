"""Scene/checkpoint JSON formats, PNG image I/O, and CSV metric writers.

Scene files parse strictly: unknown fields are rejected and every array
must have its exact length.  Checkpoints extend the scene schema with
optimizer moments and growth-ledger snapshots and are written atomically
(temp file + rename).  JSON numbers use Python's shortest round-trip
float formatting, so load -> save -> load is bitwise stable.

Images are 8-bit sRGB PNGs; the in-memory representation is linear RGB
in [0, 1] converted through the standard sRGB transfer curve.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import Camera
from .growth import GrowthEvent, GrowthLedger
from .renderer import Scene
from .texture import TexelGrid, WarpMode
from .training import AdamState

log = logging.getLogger(__name__)

SCENE_VERSION = 1

METRICS_HEADER = "step,loss,psnr,ssim,texel_count,active_textures,growth_events"
GROWTH_HEADER = "step,splat_id,action,old_tu,old_tv,new_tu,new_tv,pressure_u,pressure_v"


# ---------------------------------------------------------------------------
# sRGB <-> linear
# ---------------------------------------------------------------------------

def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(s: np.ndarray) -> np.ndarray:
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


def save_image(path, image_linear: np.ndarray) -> None:
    """Write a linear-RGB float image as an 8-bit sRGB PNG."""
    srgb = linear_to_srgb(image_linear)
    data = np.round(srgb * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read a PNG into a linear-RGB float64 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


# ---------------------------------------------------------------------------
# Strict JSON helpers
# ---------------------------------------------------------------------------

def _check_keys(obj: dict, required: set, optional: set, ctx: str) -> None:
    keys = set(obj)
    unknown = keys - required - optional
    if unknown:
        raise ValueError(f"{ctx}: unknown fields {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise ValueError(f"{ctx}: missing fields {sorted(missing)}")


def _floats(value, length: int, ctx: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (length,):
        raise ValueError(f"{ctx}: expected {length} numbers, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Scene documents
# ---------------------------------------------------------------------------

@dataclass
class SceneDocument:
    """A scene plus its cameras, target-image paths and warp mode."""

    scene: Scene
    cameras: list            # list[Camera]
    target_paths: list       # list[str | None], relative to the file
    warp_mode: WarpMode


def _camera_to_dict(cam: Camera, target_path: str | None) -> dict:
    return {
        "mode": cam.mode,
        "world_to_camera": [float(x) for x in cam.world_to_camera.ravel()],
        "fx": float(cam.focal[0]),
        "fy": float(cam.focal[1]),
        "cx": float(cam.principal[0]),
        "cy": float(cam.principal[1]),
        "width": cam.resolution[0],
        "height": cam.resolution[1],
        "target_image": target_path,
    }


def _camera_from_dict(d: dict, ctx: str) -> tuple[Camera, str | None]:
    _check_keys(d, {"mode", "world_to_camera", "fx", "fy", "cx", "cy",
                    "width", "height", "target_image"}, set(), ctx)
    cam = Camera(
        world_to_camera=_floats(d["world_to_camera"], 16, ctx).reshape(4, 4),
        focal=(float(d["fx"]), float(d["fy"])),
        principal=(float(d["cx"]), float(d["cy"])),
        resolution=(int(d["width"]), int(d["height"])),
        mode=str(d["mode"]),
    )
    target = d["target_image"]
    if target is not None and not isinstance(target, str):
        raise ValueError(f"{ctx}: target_image must be a path or null")
    return cam, target


def _texture_to_dict(t: TexelGrid) -> dict:
    return {
        "dims": [t.dims[0], t.dims[1]],
        "channels": t.channels,
        "texels": [float(x) for x in t.texels.ravel()],
        "growth_steps": t.growth_steps,
    }


def _texture_from_dict(d: dict, ctx: str) -> TexelGrid:
    _check_keys(d, {"dims", "channels", "texels"}, {"growth_steps"}, ctx)
    tu, tv = int(d["dims"][0]), int(d["dims"][1])
    ch = int(d["channels"])
    if ch not in (3, 4):
        raise ValueError(f"{ctx}: channels must be 3 or 4")
    texels = _floats(d["texels"], tu * tv * ch, ctx).reshape(tu, tv, ch)
    return TexelGrid(texels, int(d.get("growth_steps", 0)))


def _splat_to_dict(scene: Scene, k: int) -> dict:
    out = {
        "mean": [float(x) for x in scene.means[k]],
        "quaternion": [float(x) for x in scene.rotations[k]],
        "log_scale": [float(x) for x in scene.log_scales[k]],
        "opacity_logit": float(scene.opacity_logits[k]),
        "base_color": [float(x) for x in scene.base_colors[k]],
    }
    if scene.textures[k] is not None:
        out["texture"] = _texture_to_dict(scene.textures[k])
    return out


def scene_to_dict(doc: SceneDocument) -> dict:
    return {
        "version": SCENE_VERSION,
        "warp_mode": doc.warp_mode.value,
        "cameras": [_camera_to_dict(c, p) for c, p in zip(doc.cameras, doc.target_paths)],
        "splats": [_splat_to_dict(doc.scene, k) for k in range(doc.scene.n_splats)],
    }


def scene_from_dict(data: dict) -> SceneDocument:
    _check_keys(data, {"version", "warp_mode", "cameras", "splats"}, set(), "scene")
    if int(data["version"]) != SCENE_VERSION:
        raise ValueError(f"unsupported scene version {data['version']}")
    cameras = []
    targets = []
    for i, c in enumerate(data["cameras"]):
        cam, target = _camera_from_dict(c, f"cameras[{i}]")
        cameras.append(cam)
        targets.append(target)

    n = len(data["splats"])
    means = np.zeros((n, 3))
    quats = np.zeros((n, 4))
    log_scales = np.zeros((n, 2))
    opacity = np.zeros(n)
    colors = np.zeros((n, 3))
    textures = []
    for k, s in enumerate(data["splats"]):
        ctx = f"splats[{k}]"
        _check_keys(s, {"mean", "quaternion", "log_scale", "opacity_logit",
                        "base_color"}, {"texture"}, ctx)
        means[k] = _floats(s["mean"], 3, ctx)
        quats[k] = _floats(s["quaternion"], 4, ctx)
        log_scales[k] = _floats(s["log_scale"], 2, ctx)
        opacity[k] = float(s["opacity_logit"])
        colors[k] = _floats(s["base_color"], 3, ctx)
        textures.append(_texture_from_dict(s["texture"], ctx + ".texture")
                        if "texture" in s else None)

    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("scene contains a zero quaternion")
    if np.any(np.abs(norms - 1.0) > 1e-3):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        log.warning("renormalizing quaternions on load (splat %d deviates by %.2e)",
                    worst, abs(norms[worst] - 1.0))
    # skip the division for already-normalized rows: renormalizing across a
    # 1-ulp norm would break bitwise round-trip stability
    off = np.abs(norms - 1.0) > 1e-12
    quats[off] /= norms[off, None]

    scene = Scene(means, quats, log_scales, opacity, colors, textures)
    return SceneDocument(scene, cameras, targets, WarpMode.parse(data["warp_mode"]))


def _atomic_write_json(path, data: dict) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(data, f, indent=1, allow_nan=False)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_scene(path, doc: SceneDocument) -> None:
    _atomic_write_json(path, scene_to_dict(doc))


def load_scene(path) -> SceneDocument:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def load_dataset(doc: SceneDocument, base_dir) -> list:
    """(camera, target image) pairs for every camera with a target path."""
    dataset = []
    for cam, rel in zip(doc.cameras, doc.target_paths):
        if rel is None:
            continue
        img = load_image(os.path.join(base_dir, rel))
        if img.shape[:2] != (cam.resolution[1], cam.resolution[0]):
            raise ValueError(f"target {rel} does not match camera resolution")
        dataset.append((cam, img))
    return dataset


# ---------------------------------------------------------------------------
# Checkpoints (scene + optimizer + growth ledger)
# ---------------------------------------------------------------------------

@dataclass
class CheckpointData:
    document: SceneDocument
    adam: AdamState
    ledger: GrowthLedger
    meta: dict


def _moments_to_dict(adam: AdamState) -> dict:
    entries = {}
    for name in sorted(adam.m):
        entries[name] = {
            "shape": list(adam.m[name].shape),
            "m": [float(x) for x in adam.m[name].ravel()],
            "v": [float(x) for x in adam.v[name].ravel()],
        }
    return {"t": adam.t, "moments": entries}


def _moments_from_dict(d: dict) -> AdamState:
    _check_keys(d, {"t", "moments"}, set(), "optimizer")
    state = AdamState(t=int(d["t"]))
    for name, entry in d["moments"].items():
        _check_keys(entry, {"shape", "m", "v"}, set(), f"optimizer.{name}")
        shape = tuple(int(x) for x in entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        state.m[name] = _floats(entry["m"], size, name).reshape(shape)
        state.v[name] = _floats(entry["v"], size, name).reshape(shape)
    return state


def _ledger_to_dict(ledger: GrowthLedger) -> dict:
    return {
        "g_u": [None if g is None else [float(x) for x in g] for g in ledger.g_u],
        "g_v": [None if g is None else [float(x) for x in g] for g in ledger.g_v],
        "n_g": [int(x) for x in ledger.n_g],
        "base_pressure": [float(x) for x in ledger.base_pressure],
        "activated": [bool(x) for x in ledger.activated],
        "growth_steps": [int(x) for x in ledger.growth_steps],
    }


def _ledger_from_dict(d: dict) -> GrowthLedger:
    _check_keys(d, {"g_u", "g_v", "n_g", "base_pressure", "activated",
                    "growth_steps"}, set(), "ledger")
    return GrowthLedger(
        g_u=[None if g is None else np.asarray(g, dtype=np.float64) for g in d["g_u"]],
        g_v=[None if g is None else np.asarray(g, dtype=np.float64) for g in d["g_v"]],
        n_g=np.asarray(d["n_g"], dtype=np.int64),
        base_pressure=np.asarray(d["base_pressure"], dtype=np.float64),
        activated=np.asarray(d["activated"], dtype=bool),
        growth_steps=np.asarray(d["growth_steps"], dtype=np.int64),
        last_pressures=np.zeros((len(d["n_g"]), 2)),
    )


def save_checkpoint(path, doc: SceneDocument, adam: AdamState,
                    ledger: GrowthLedger, meta: dict | None = None) -> None:
    data = scene_to_dict(doc)
    data["optimizer"] = _moments_to_dict(adam)
    data["ledger"] = _ledger_to_dict(ledger)
    data["meta"] = dict(meta or {})
    _atomic_write_json(path, data)


def load_checkpoint(path) -> CheckpointData:
    with open(path) as f:
        data = json.load(f)
    _check_keys(data, {"version", "warp_mode", "cameras", "splats",
                       "optimizer", "ledger", "meta"}, set(), "checkpoint")
    scene_part = {k: data[k] for k in ("version", "warp_mode", "cameras", "splats")}
    doc = scene_from_dict(scene_part)
    return CheckpointData(
        document=doc,
        adam=_moments_from_dict(data["optimizer"]),
        ledger=_ledger_from_dict(data["ledger"]),
        meta=dict(data["meta"]),
    )


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_metrics_csv(path, rows: list) -> None:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) for k in
                              ("step", "loss", "psnr", "ssim", "texel_count",
                               "active_textures", "growth_events")))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_growth_csv(path, events: list) -> None:
    lines = [GROWTH_HEADER]
    for e in events:
        lines.append(",".join([
            str(e.step), str(e.splat), e.action,
            str(e.old_dims[0]), str(e.old_dims[1]),
            str(e.new_dims[0]), str(e.new_dims[1]),
            repr(e.pressure_u), repr(e.pressure_v),
        ]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_growth_csv(path) -> list:
    events = []
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != GROWTH_HEADER:
        raise ValueError("growth CSV missing its header")
    for ln in lines[1:]:
        parts = ln.split(",")
        events.append(GrowthEvent(
            step=int(parts[0]), splat=int(parts[1]), action=parts[2],
            old_dims=(int(parts[3]), int(parts[4])),
            new_dims=(int(parts[5]), int(parts[6])),
            pressure_u=float(parts[7]), pressure_v=float(parts[8]),
        ))
    return events
