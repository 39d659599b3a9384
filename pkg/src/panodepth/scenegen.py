"""Procedural indoor scenes rendered as equirectangular stereo pairs.

A scene is an axis-aligned room ``[0, W] x [0, H] x [0, D]`` (y grows
downward, so y = 0 is the ceiling and y = H the floor) holding boxes and
spheres.  Surfaces carry a hashed checker texture, are lit by one point light
with Lambertian shading, and are ray cast exactly so depth and disparity
ground truth is analytic.

Randomness comes only from ``numpy.random.Generator(PCG64(seed))``; the
generator and the order of draws are fixed, so a seed reproduces the same
scene on every platform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from panodepth.errors import DataError, PanoDepthError
from panodepth.geometry import RigConfig, angle_matrix, pixel_to_lonlat
from panodepth.panorama_io import Panorama, read_pfm, read_ppm, write_pfm, write_ppm


class GenerationError(PanoDepthError):
    """Scene constraints could not be met within the retry budget."""


@dataclass(frozen=True)
class SceneObject:
    kind: str  # "box" or "sphere"
    center: tuple
    size: tuple  # box half extents (x, y, z), or (radius,) for spheres
    albedo: tuple


@dataclass(frozen=True)
class SceneSpec:
    room: tuple  # (width_x, height_y, depth_z) in meters
    camera: tuple  # top camera position
    objects: tuple
    light: tuple
    light_intensity: float
    texture_period: float
    texture_albedos: tuple  # two RGB triples
    seed: int


@dataclass(frozen=True)
class SceneParams:
    """Ranges sampled by :func:`generate_scene`."""

    room_width: tuple = (5.0, 8.0)
    room_depth: tuple = (5.0, 8.0)
    room_height: tuple = (2.6, 3.4)
    camera_height: tuple = (0.4, 0.55)  # fraction of room height measured from the ceiling
    num_objects: tuple = (0, 4)
    object_size: tuple = (0.4, 1.2)
    texture_period: float = 0.5
    baseline: float = 0.26
    clearance: float = 0.4
    max_retries: int = 200


@dataclass
class StereoSample:
    top_rgb: Panorama
    bottom_rgb: Panorama
    top_depth: Panorama
    gt_disparity: Panorama
    rig: RigConfig


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(lo + (hi - lo) * rng.random())


def _camera_positions(camera, baseline):
    cx, cy, cz = camera
    return [np.array([cx, cy, cz]), np.array([cx, cy + baseline, cz])]


def _point_clear(p, room, objects, margin):
    w, h, d = room
    if not (margin < p[0] < w - margin and margin < p[1] < h - margin and margin < p[2] < d - margin):
        return False
    for obj in objects:
        c = np.asarray(obj.center)
        if obj.kind == "sphere":
            if np.linalg.norm(p - c) <= obj.size[0] + margin:
                return False
        elif np.all(np.abs(p - c) <= np.asarray(obj.size) + margin):
            return False
    return True


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SceneSpec:
    """Sample a valid scene; identical (seed, params) give identical specs."""
    if params.object_size[1] > min(params.room_width[1], params.room_depth[1], params.room_height[1]):
        raise GenerationError("objects larger than the room cannot be placed")
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(params.max_retries):
        room = (_uniform(rng, params.room_width), _uniform(rng, params.room_height),
                _uniform(rng, params.room_depth))
        w, h, d = room
        camera = (w * (0.35 + 0.3 * rng.random()), h * _uniform(rng, params.camera_height),
                  d * (0.35 + 0.3 * rng.random()))
        lo, hi = params.num_objects
        count = int(rng.integers(lo, hi + 1))
        objects = []
        for _ in range(count):
            placed = False
            for _ in range(params.max_retries):
                size = _uniform(rng, params.object_size)
                albedo = tuple(float(a) for a in 0.25 + 0.7 * rng.random(3))
                if rng.random() < 0.5:
                    half = (0.5 * size, 0.5 * size * (0.6 + 0.8 * rng.random()), 0.5 * size)
                    if 2 * half[1] >= h or size >= min(w, d):
                        continue
                    # boxes rest on the floor
                    center = (_uniform(rng, (half[0], w - half[0])), h - half[1],
                              _uniform(rng, (half[2], d - half[2])))
                    obj = SceneObject("box", center, half, albedo)
                else:
                    r = 0.5 * size
                    if size >= min(w, h, d):
                        continue
                    center = (_uniform(rng, (r, w - r)), _uniform(rng, (r, h - r)), _uniform(rng, (r, d - r)))
                    obj = SceneObject("sphere", center, (r,), albedo)
                if all(_point_clear(p, room, objects + [obj], params.clearance)
                       for p in _camera_positions(camera, params.baseline)):
                    objects.append(obj)
                    placed = True
                    break
            if not placed:
                break
        else:
            if not all(_point_clear(p, room, objects, params.clearance)
                       for p in _camera_positions(camera, params.baseline)):
                continue
            light = (w * (0.2 + 0.6 * rng.random()), 0.1 * h, d * (0.2 + 0.6 * rng.random()))
            a0 = tuple(float(a) for a in 0.15 + 0.25 * rng.random(3))
            a1 = tuple(float(a) for a in 0.65 + 0.3 * rng.random(3))
            return SceneSpec(room=room, camera=camera, objects=tuple(objects), light=light,
                             light_intensity=float(4.0 + 4.0 * rng.random()),
                             texture_period=params.texture_period, texture_albedos=(a0, a1),
                             seed=int(seed))
    raise GenerationError(f"no valid scene after {params.max_retries} attempts (seed {seed})")


def ray_directions(rig: RigConfig) -> np.ndarray:
    """Unit view directions through every pixel center, shape (H, W, 3)."""
    xs = np.arange(rig.width) + 0.5
    ys = np.arange(rig.height) + 0.5
    lon, lat = pixel_to_lonlat(xs, ys, rig)
    lon = lon[None, :]
    lat = lat[:, None]
    cl = np.cos(lat)
    return np.stack(np.broadcast_arrays(cl * np.sin(lon), np.sin(lat), cl * np.cos(lon)), axis=-1)


def _hash01(i, j, k):
    """Deterministic integer hash of cell coordinates mapped to [0, 1)."""
    x = (i.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ j.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ k.astype(np.int64).astype(np.uint64) * np.uint64(0x165667B19E3779F9))
    x ^= x >> np.uint64(31)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(29)
    return (x >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _texture(points, axis, surface_id, period):
    """Hashed checker in [0, 1] on the plane orthogonal to ``axis``."""
    u_axis = np.where(axis == 0, 1, 0)
    v_axis = np.where(axis == 2, 1, 2)
    u = np.take_along_axis(points, u_axis[..., None], axis=-1)[..., 0]
    v = np.take_along_axis(points, v_axis[..., None], axis=-1)[..., 0]
    i = np.floor(u / period)
    j = np.floor(v / period)
    parity = np.mod(i + j, 2.0)
    return 0.6 * parity + 0.4 * _hash01(i, j, surface_id)


def render_equirect(scene: SceneSpec, camera_origin, rig: RigConfig):
    """Ray cast the scene from ``camera_origin``.

    Returns ``(rgb, depth)`` panoramas; depth is the Euclidean distance to
    the first hit and rgb is quantized to 8-bit levels so it survives PPM
    storage unchanged.
    """
    o = np.asarray(camera_origin, dtype=np.float64)
    dirs = ray_directions(rig)
    room = np.asarray(scene.room)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        # exit point of the room box
        t_exit = np.where(dirs > 0, (room - o) * inv, np.where(dirs < 0, -o * inv, np.inf))
    axis = np.argmin(t_exit, axis=-1)
    t = np.take_along_axis(t_exit, axis[..., None], axis=-1)[..., 0]
    sign = -np.sign(np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0])
    # surfaces: 0..5 room faces, 6+ objects
    surface = axis * 2 + (sign > 0)
    normal_axis = axis.copy()
    normal_sign = sign
    sphere_normal = None
    is_sphere = np.zeros(t.shape, dtype=bool)
    obj_albedo = np.ones(t.shape + (3,))
    for idx, obj in enumerate(scene.objects):
        c = np.asarray(obj.center)
        if obj.kind == "box":
            half = np.asarray(obj.size)
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (c - half - o) * inv
                t2 = (c + half - o) * inv
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            near_axis = np.argmax(tmin, axis=-1)
            t_near = np.max(tmin, axis=-1)
            t_far = np.min(tmax, axis=-1)
            hit = (t_near <= t_far) & (t_near > 0) & (t_near < t)
            t = np.where(hit, t_near, t)
            normal_axis = np.where(hit, near_axis, normal_axis)
            dsign = np.take_along_axis(dirs, near_axis[..., None], axis=-1)[..., 0]
            normal_sign = np.where(hit, -np.sign(dsign), normal_sign)
            is_sphere &= ~hit
        else:
            r = obj.size[0]
            oc = o - c
            b = dirs @ oc
            disc = b * b - (oc @ oc - r * r)
            root = np.sqrt(np.maximum(disc, 0.0))
            t_hit = -b - root
            hit = (disc > 0) & (t_hit > 0) & (t_hit < t)
            t = np.where(hit, t_hit, t)
            is_sphere = np.where(hit, True, is_sphere)
            pts = o + t_hit[..., None] * dirs
            n = (pts - c) / r
            sphere_normal = n if sphere_normal is None else np.where(hit[..., None], n, sphere_normal)
            normal_axis = np.where(hit, np.argmax(np.abs(n), axis=-1), normal_axis)
        surface = np.where(hit, 6 + idx, surface)
        obj_albedo = np.where(hit[..., None], np.asarray(obj.albedo), obj_albedo)

    points = o + t[..., None] * dirs
    normal = np.zeros(points.shape)
    np.put_along_axis(normal, normal_axis[..., None], normal_sign[..., None], axis=-1)
    if sphere_normal is not None:
        normal = np.where(is_sphere[..., None], sphere_normal, normal)

    tex = _texture(points, normal_axis, surface, scene.texture_period)
    a0 = np.asarray(scene.texture_albedos[0])
    a1 = np.asarray(scene.texture_albedos[1])
    albedo = a0 + tex[..., None] * (a1 - a0)
    on_object = surface >= 6
    albedo = np.where(on_object[..., None], obj_albedo * (0.55 + 0.45 * tex[..., None]), albedo)

    to_light = np.asarray(scene.light) - points
    dist2 = np.sum(to_light * to_light, axis=-1)
    cos_theta = np.maximum(np.sum(normal * to_light, axis=-1) / np.sqrt(dist2), 0.0)
    ambient = 0.3
    shade = ambient + (1.0 - ambient) * np.minimum(scene.light_intensity * cos_theta / dist2, 1.0)
    rgb = np.clip(albedo * shade[..., None], 0.0, 1.0)
    rgb = np.rint(rgb * 255.0) / 255.0
    return Panorama(rgb.astype(np.float32), "rgb"), Panorama(t.astype(np.float32), "depth")


def render_stereo_sample(scene: SceneSpec, rig: RigConfig) -> StereoSample:
    """Render the top camera at ``scene.camera`` and the bottom camera
    ``rig.baseline`` meters below it, plus analytic disparity for the top view."""
    top, bottom = _camera_positions(scene.camera, rig.baseline)
    top_rgb, top_depth = render_equirect(scene, top, rig)
    if rig.baseline == 0.0:
        bottom_rgb = Panorama(top_rgb.data.copy(), "rgb")
    else:
        bottom_rgb, _ = render_equirect(scene, bottom, rig)
    cos_lat = angle_matrix(rig).values
    disp = rig.baseline * cos_lat / top_depth.data.astype(np.float64)
    return StereoSample(top_rgb, bottom_rgb, top_depth, Panorama(disp.astype(np.float32), "disparity"), rig)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


MANIFEST = "manifest.txt"


def make_dataset(seed: int, count: int, rig: RigConfig, params: SceneParams, out_dir) -> str:
    """Render ``count`` samples into ``out_dir`` and write ``manifest.txt``.

    Each manifest line describes one sample (files, seed and rig), so the
    line count equals ``count``.  Returns the manifest path.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if params.baseline != rig.baseline:
        params = SceneParams(**{**params.__dict__, "baseline": rig.baseline})
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i in range(count):
        s = sample_seed(seed, i)
        sample = render_stereo_sample(generate_scene(s, params), rig)
        stem = f"{i:04d}"
        write_ppm(sample.top_rgb, os.path.join(out_dir, f"{stem}_top.ppm"))
        write_ppm(sample.bottom_rgb, os.path.join(out_dir, f"{stem}_bottom.ppm"))
        write_pfm(sample.top_depth, os.path.join(out_dir, f"{stem}_depth.pfm"))
        write_pfm(sample.gt_disparity, os.path.join(out_dir, f"{stem}_disp.pfm"))
        lines.append(
            f"{stem} seed={s} top={stem}_top.ppm bottom={stem}_bottom.ppm depth={stem}_depth.pfm "
            f"disp={stem}_disp.pfm baseline={rig.baseline!r} width={rig.width} height={rig.height} "
            f"fov_w={rig.fov_w!r} fov_h={rig.fov_h!r}")
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    return path


@dataclass
class ManifestEntry:
    stem: str
    seed: int
    files: dict = field(default_factory=dict)
    rig: RigConfig = None


def read_manifest(out_dir) -> list:
    path = os.path.join(out_dir, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST} in {out_dir}")
    entries = []
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                kv = dict(p.split("=", 1) for p in parts[1:])
                rig = RigConfig(float(kv["baseline"]), int(kv["width"]), int(kv["height"]),
                                float(kv["fov_w"]), float(kv["fov_h"]))
                files = {k: kv[k] for k in ("top", "bottom", "depth", "disp")}
                entries.append(ManifestEntry(parts[0], int(kv["seed"]), files, rig))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest line ({exc})") from None
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


def load_sample(out_dir, entry: ManifestEntry, with_gt: bool = True) -> StereoSample:
    top = read_ppm(os.path.join(out_dir, entry.files["top"]))
    bottom = read_ppm(os.path.join(out_dir, entry.files["bottom"]))
    depth = disp = None
    if with_gt:
        depth = read_pfm(os.path.join(out_dir, entry.files["depth"]), "depth")
        disp = read_pfm(os.path.join(out_dir, entry.files["disp"]), "disparity")
    return StereoSample(top, bottom, depth, disp, entry.rig)
