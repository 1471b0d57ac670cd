"""Analytic renderer: Lambertian diffuse + GGX microfacet specular.

Metalness workflow on parametric geometry (sphere / plane / box) under point
lights or a uniform environment.  Deterministic by construction: the uniform
environment's specular term uses a fixed 64-point cosine-stratified sample
set shared by all pixels, and no RNG is consulted at render time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import RejectedInput
from .materials import MaterialTriplet

ROUGHNESS_FLOOR = 0.03  # keeps the GGX normal distribution finite at r -> 0
FOV_DEG = 40.0
_ENV_CHUNK = 16384  # pixels per chunk for the 64-sample environment integral

GEOMETRIES = ("sphere", "plane", "box")
PLANE_HALF = 1.2
BOX_HALF = 0.7


@dataclass(frozen=True)
class PointLight:
    position: tuple[float, float, float]
    intensity: tuple[float, float, float]


@dataclass
class SceneSpec:
    """Camera, geometry and lighting for one rendered view."""

    geometry: str = "sphere"
    azimuth_deg: float = 30.0
    elevation_deg: float = 25.0
    distance: float = 3.0
    lights: tuple[PointLight, ...] = ()
    env_radiance: Optional[tuple[float, float, float]] = None
    view_count: int = 1

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise RejectedInput(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if not self.lights and self.env_radiance is None:
            raise RejectedInput("scene needs at least one light source")
        if self.view_count < 1:
            raise RejectedInput("view_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry,
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "distance": self.distance,
            "lights": [{"position": list(l.position), "intensity": list(l.intensity)} for l in self.lights],
            "env_radiance": list(self.env_radiance) if self.env_radiance is not None else None,
            "view_count": self.view_count,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            geometry=d["geometry"],
            azimuth_deg=d["azimuth_deg"],
            elevation_deg=d["elevation_deg"],
            distance=d["distance"],
            lights=tuple(PointLight(tuple(l["position"]), tuple(l["intensity"])) for l in d["lights"]),
            env_radiance=tuple(d["env_radiance"]) if d["env_radiance"] is not None else None,
            view_count=d["view_count"],
        )


@dataclass
class RenderedPair:
    image: np.ndarray  # H,W,3 float32 in [0,1]
    triplet: MaterialTriplet
    scene: SceneSpec
    mask: np.ndarray  # H,W,1 bool


def _cosine_stratified_samples(n_side: int = 8) -> np.ndarray:
    """Fixed cosine-weighted hemisphere directions in local (+z up) frame."""
    i, j = np.meshgrid((np.arange(n_side) + 0.5) / n_side, (np.arange(n_side) + 0.5) / n_side, indexing="ij")
    u1, u2 = i.ravel(), j.ravel()
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u1))], axis=-1)


_ENV_SAMPLES = _cosine_stratified_samples(8)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)


def _camera_rays(resolution: int, azimuth_deg: float, elevation_deg: float, distance: float):
    if distance <= 0.0:
        raise RejectedInput(f"camera distance must be > 0, got {distance}")
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    pos = distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    forward = _normalize(-pos[None, :])[0]
    up = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.999 else np.array([1.0, 0.0, 0.0])
    right = _normalize(np.cross(forward, up)[None, :])[0]
    cam_up = np.cross(right, forward)

    half = np.tan(np.deg2rad(FOV_DEG) / 2.0)
    px = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    xs, ys = np.meshgrid(px, px[::-1], indexing="xy")  # rows top-down, +y up
    dirs = forward[None, None, :] + half * (xs[..., None] * right[None, None, :] + ys[..., None] * cam_up[None, None, :])
    dirs = _normalize(dirs.reshape(-1, 3))
    origins = np.broadcast_to(pos, dirs.shape)
    return origins.astype(np.float64), dirs.astype(np.float64)


def _intersect(geometry: str, o: np.ndarray, d: np.ndarray):
    """Returns (hit mask, points, normals, uv)."""
    n_rays = o.shape[0]
    hit = np.zeros(n_rays, dtype=bool)
    pts = np.zeros((n_rays, 3))
    nrm = np.zeros((n_rays, 3))
    uv = np.zeros((n_rays, 2))

    if geometry == "sphere":
        b = np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - 1.0
        disc = b * b - c
        ok = disc >= 0.0
        t = -b - np.sqrt(np.maximum(disc, 0.0))
        ok &= t > 1e-6
        p = o + t[:, None] * d
        n = p  # unit sphere: normal == position
        az = np.arctan2(p[:, 1], p[:, 0])
        pol = np.arccos(np.clip(p[:, 2], -1.0, 1.0))
        hit, pts[ok], nrm[ok] = ok, p[ok], n[ok]
        uv[ok, 0] = az[ok] / (2.0 * np.pi) + 0.5
        uv[ok, 1] = pol[ok] / np.pi
    elif geometry == "plane":
        dz = d[:, 2]
        ok = np.abs(dz) > 1e-9
        t = np.where(ok, -o[:, 2] / np.where(ok, dz, 1.0), -1.0)
        p = o + t[:, None] * d
        ok &= (t > 1e-6) & (np.abs(p[:, 0]) <= PLANE_HALF) & (np.abs(p[:, 1]) <= PLANE_HALF)
        n = np.zeros_like(p)
        n[:, 2] = np.where(o[:, 2] >= 0.0, 1.0, -1.0)
        hit, pts[ok], nrm[ok] = ok, p[ok], n[ok]
        uv[ok, 0] = (p[ok, 0] / PLANE_HALF + 1.0) / 2.0
        uv[ok, 1] = (p[ok, 1] / PLANE_HALF + 1.0) / 2.0
    elif geometry == "box":
        inv = 1.0 / np.where(np.abs(d) > 1e-12, d, np.where(d >= 0, 1e-12, -1e-12))
        t0 = (-BOX_HALF - o) * inv
        t1 = (BOX_HALF - o) * inv
        tmin = np.minimum(t0, t1)
        tmax = np.maximum(t0, t1)
        t_near = tmin.max(axis=-1)
        t_far = tmax.min(axis=-1)
        ok = (t_near <= t_far) & (t_near > 1e-6)
        p = o + t_near[:, None] * d
        axis = tmin.argmax(axis=-1)
        n = np.zeros_like(p)
        rows = np.arange(n_rays)
        n[rows, axis] = -np.sign(d[rows, axis])
        hit, pts[ok], nrm[ok] = ok, p[ok], n[ok]
        other = np.array([[1, 2], [0, 2], [0, 1]])[axis]
        a = p[rows, other[:, 0]]
        b2 = p[rows, other[:, 1]]
        uv[ok, 0] = (a[ok] / BOX_HALF + 1.0) / 2.0
        uv[ok, 1] = (b2[ok] / BOX_HALF + 1.0) / 2.0
    else:  # pragma: no cover - guarded by SceneSpec
        raise RejectedInput(f"unknown geometry {geometry!r}")
    return hit, pts, nrm, np.clip(uv, 0.0, 1.0)


def _sample_bilinear(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Clamp-to-edge bilinear lookup; uv in [0,1]^2, tex H×W×C."""
    h, w = tex.shape[:2]
    x = uv[:, 0] * (w - 1)
    y = uv[:, 1] * (h - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    t00 = tex[y0, x0]
    t10 = tex[y0, x1]
    t01 = tex[y1, x0]
    t11 = tex[y1, x1]
    return (t00 * (1 - fx) + t10 * fx) * (1 - fy) + (t01 * (1 - fx) + t11 * fx) * fy


def _schlick(cos_t: np.ndarray, f0: np.ndarray) -> np.ndarray:
    return f0 + (1.0 - f0) * (1.0 - cos_t) ** 5


def _ggx_d(noh: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a2 = alpha * alpha
    denom = noh * noh * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def _smith_g1(nox: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a2 = alpha * alpha
    return 2.0 * nox / (nox + np.sqrt(a2 + (1.0 - a2) * nox * nox))


def _specular(n, v, wi, nov, alpha, f0):
    """Cook-Torrance single-scatter specular lobe (per-channel Fresnel)."""
    h = _normalize(v + wi)
    noh = np.clip(np.sum(n * h, axis=-1), 0.0, 1.0)
    nol = np.clip(np.sum(n * wi, axis=-1), 1e-6, 1.0)
    voh = np.clip(np.sum(v * h, axis=-1), 0.0, 1.0)
    d = _ggx_d(noh, alpha)
    g = _smith_g1(nol, alpha) * _smith_g1(nov, alpha)
    f = _schlick(voh[..., None], f0)
    return (d * g / (4.0 * nov * nol))[..., None] * f


def _tangent_frame(n: np.ndarray):
    up = np.where(np.abs(n[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t = _normalize(np.cross(up, n))
    b = np.cross(n, t)
    return t, b


def _env_specular(n, v, nov, alpha, f0, env_l):
    """64-sample estimate of the specular hemisphere integral under a
    uniform environment.  Cosine-weighted pdf cancels the geometry cosine,
    leaving mean(pi * f_spec)."""
    out = np.zeros((n.shape[0], 3))
    t, b = _tangent_frame(n)
    for start in range(0, n.shape[0], _ENV_CHUNK):
        sl = slice(start, start + _ENV_CHUNK)
        loc = _ENV_SAMPLES[None, :, :]  # 1,S,3
        wi = (
            loc[..., 0:1] * t[sl, None, :]
            + loc[..., 1:2] * b[sl, None, :]
            + loc[..., 2:3] * n[sl, None, :]
        )
        spec = _specular(
            n[sl, None, :], v[sl, None, :], wi, nov[sl, None], alpha[sl, None], f0[sl, None, :]
        )
        out[sl] = np.pi * spec.mean(axis=1)
    return out * env_l[None, :]


def render_aux(triplet: MaterialTriplet, scene: SceneSpec) -> dict:
    """Render and return auxiliary per-pixel buffers alongside the image.

    Keys: image, mask, foreground_idx, and flattened-over-foreground buffers
    sampled_albedo/metallic/roughness (maps as seen by the shader), nov, and
    the diffuse/specular response split (pre tone clamp).
    """
    res = triplet.resolution
    o, d = _camera_rays(res, scene.azimuth_deg, scene.elevation_deg, scene.distance)
    hit, pts, nrm, uv = _intersect(scene.geometry, o, d)

    image = np.zeros((res * res, 3), dtype=np.float64)
    idx = np.nonzero(hit)[0]
    aux = {
        "mask": hit.reshape(res, res, 1).copy(),
        "foreground_idx": idx,
    }
    if idx.size:
        p = pts[idx]
        n = _normalize(nrm[idx])
        v = _normalize(o[idx] - p)
        # backface guard: flip normals toward the viewer (box edges, plane underside)
        flip = np.sum(n * v, axis=-1) < 0.0
        n[flip] = -n[flip]
        nov = np.clip(np.sum(n * v, axis=-1), 1e-4, 1.0)

        alb = _sample_bilinear(triplet.albedo.astype(np.float64), uv[idx])
        met = _sample_bilinear(triplet.metallic.astype(np.float64), uv[idx])[:, 0]
        rgh = _sample_bilinear(triplet.roughness.astype(np.float64), uv[idx])[:, 0]
        rgh_eff = np.maximum(rgh, ROUGHNESS_FLOOR)
        alpha = rgh_eff * rgh_eff

        f0 = 0.04 * (1.0 - met[:, None]) + alb * met[:, None]
        kd = (1.0 - _schlick(nov[:, None], f0)) * (1.0 - met[:, None])
        diffuse_color = alb * (1.0 - met[:, None])

        diffuse_acc = np.zeros_like(alb)
        specular_acc = np.zeros_like(alb)
        if scene.env_radiance is not None:
            env_l = np.asarray(scene.env_radiance, dtype=np.float64)
            env_diff = kd * diffuse_color * env_l[None, :]  # analytic Lambert integral
            env_spec = _env_specular(n, v, nov, alpha, f0, env_l)
            # The 64-sample estimator can overshoot at low roughness; the true
            # response under uniform radiance never exceeds L (white furnace
            # bound), so rescale the estimate onto that bound.
            total = env_diff + env_spec
            scale = np.minimum(1.0, env_l[None, :] / np.maximum(total, 1e-12))
            diffuse_acc += env_diff * scale
            specular_acc += env_spec * scale
        for light in scene.lights:
            lp = np.asarray(light.position, dtype=np.float64)
            li = np.asarray(light.intensity, dtype=np.float64)
            to_l = lp[None, :] - p
            dist2 = np.maximum(np.sum(to_l * to_l, axis=-1), 1e-9)
            wi = to_l / np.sqrt(dist2)[:, None]
            nol = np.sum(n * wi, axis=-1)
            lit = nol > 0.0
            if not np.any(lit):
                continue
            irradiance = li[None, :] / dist2[lit, None] * nol[lit, None]
            diffuse_acc[lit] += kd[lit] * diffuse_color[lit] / np.pi * irradiance
            specular_acc[lit] += _specular(
                n[lit], v[lit], wi[lit], nov[lit], alpha[lit], f0[lit]
            ) * irradiance

        image[idx] = diffuse_acc + specular_acc
        aux["diffuse"] = diffuse_acc
        aux["specular"] = specular_acc
        aux["sampled_albedo"] = alb
        aux["sampled_metallic"] = met
        aux["sampled_roughness"] = rgh
        aux["nov"] = nov
    else:
        aux["sampled_albedo"] = np.zeros((0, 3))
        aux["sampled_metallic"] = np.zeros((0,))
        aux["sampled_roughness"] = np.zeros((0,))
        aux["nov"] = np.zeros((0,))
        aux["diffuse"] = np.zeros((0, 3))
        aux["specular"] = np.zeros((0, 3))

    aux["image"] = np.clip(image, 0.0, 1.0).reshape(res, res, 3).astype(np.float32)
    return aux


def render(triplet: MaterialTriplet, scene: SceneSpec) -> RenderedPair:
    """Render a material under a scene; tone mapping is plain clamping."""
    aux = render_aux(triplet, scene)
    return RenderedPair(image=aux["image"], triplet=triplet, scene=scene, mask=aux["mask"])
