"""Synthetic acquisitions with known ground truth.

For every frame a marker rotation is sampled and an image point P_k is drawn
at random; the marker translation is then solved for so that the image plane
passes through the phantom landmark:

    t = T_PC x_p - R (T_UM P_k)

Gaussian noise is added to the marker pose and the feature pixel afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import ndimage

from .absolute_orientation import Mode, solve_horn
from .bscan import BScanGeometry, BScanImage
from .calibrate import build_correspondences
from .errors import NoIntersection
from .frames import FrameObservation
from .geom3d import RigidTransform, UnitQuaternion, apply, chain, inverse, rotation_about
from .phantom import PhantomModel, hemisphere_preset

Artifacts = Literal["none", "speckle", "speckle+walls"]

# image axes -> phantom axes for an upright probe: u -> +x, v (depth) -> -z, normal -> +y
_UPRIGHT = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


def default_T_UM() -> RigidTransform:
    q = rotation_about("z", 0.08) * rotation_about("y", -0.05) * rotation_about("x", 0.03)
    return RigidTransform(q, (-64.0, -4.0, 18.0))


def default_T_PC() -> RigidTransform:
    q = rotation_about("x", math.pi - 0.7) * rotation_about("z", 0.2)
    return RigidTransform(q, (-55.0, 35.0, 520.0))


def upright_marker_rotation(T_PC: RigidTransform, T_UM: RigidTransform) -> UnitQuaternion:
    """Marker orientation that makes the image depth axis point down in the phantom."""
    return UnitQuaternion.from_matrix(T_PC.R @ _UPRIGHT @ T_UM.R.T)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_t: float = 0.0  # mm, per marker-translation component
    sigma_rot: float = 0.0  # rad, random-axis marker rotation
    sigma_px: float = 0.0  # px, per feature-pixel component

    def __post_init__(self):
        if min(self.sigma_t, self.sigma_rot, self.sigma_px) < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class SyntheticConfig:
    n_frames: int = 20
    seed: int = 0
    # uniform sweep angles about the marker x and y axes (rad); z rotation is fixed
    rotation_range: tuple[tuple[float, float], tuple[float, float]] = ((-0.35, 0.35), (-0.35, 0.35))
    rotation_z: float = 0.0
    # bounds of the random image point P_k, mm along u and v
    feature_bounds: tuple[tuple[float, float], tuple[float, float]] = ((20.0, 108.0), (20.0, 75.0))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    T_UM_true: RigidTransform = field(default_factory=default_T_UM)
    T_PC_true: RigidTransform = field(default_factory=default_T_PC)
    # marker orientation before the sweep; None = upright probe over the phantom
    marker_base: UnitQuaternion | None = None
    geometry: BScanGeometry = field(default_factory=lambda: BScanGeometry(640, 512, 0.2, 0.2))
    phantom: PhantomModel = field(default_factory=hemisphere_preset)
    label: str | None = None

    def __post_init__(self):
        if self.n_frames < 3:
            raise ValueError("n_frames must be >= 3")
        for lo, hi in (*self.rotation_range, *self.feature_bounds):
            if not lo <= hi:
                raise ValueError(f"empty bound ({lo}, {hi})")

    def base_rotation(self) -> UnitQuaternion:
        if self.marker_base is not None:
            return self.marker_base
        return upright_marker_rotation(self.T_PC_true, self.T_UM_true)


def trial_seed(seed: int, trial: int) -> int:
    """Independent 64-bit seed for trial ``trial`` of a study seeded with ``seed``."""
    ss = np.random.SeedSequence([seed, trial])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class Acquisition:
    """Noisy frames plus the noiseless truth they were derived from."""

    frames: list[FrameObservation]
    clean: list[FrameObservation]
    image_points: np.ndarray  # (N, 3) true P_k, mm


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed % (1 << 64), *stream])


def acquire(cfg: SyntheticConfig) -> Acquisition:
    geo = _rng(cfg.seed, 0)
    noise = _rng(cfg.seed, 1)
    g = cfg.geometry
    x_p = cfg.phantom.feature(cfg.label)
    target = apply(cfg.T_PC_true, x_p)
    base = cfg.base_rotation()
    (ax_lo, ax_hi), (ay_lo, ay_hi) = cfg.rotation_range
    (u_lo, u_hi), (v_lo, v_hi) = cfg.feature_bounds
    sig = cfg.noise

    frames, clean, pts = [], [], []
    for k in range(cfg.n_frames):
        alpha = geo.uniform(ax_lo, ax_hi)
        beta = geo.uniform(ay_lo, ay_hi)
        q = base * rotation_about("x", alpha) * rotation_about("y", beta) * rotation_about("z", cfg.rotation_z)
        P_k = np.array([geo.uniform(u_lo, u_hi), geo.uniform(v_lo, v_hi), 0.0])
        t = target - q.to_matrix() @ apply(cfg.T_UM_true, P_k)
        T_MC = RigidTransform(q, tuple(t))
        px = (P_k[0] / g.s_x, P_k[1] / g.s_y)
        clean.append(FrameObservation(k, T_MC, cfg.T_PC_true, px))
        pts.append(P_k)

        # unit draws are always consumed so that noise scales linearly with sigma
        dt = noise.standard_normal(3)
        axis = noise.standard_normal(3)
        ang = noise.standard_normal()
        dpx = noise.standard_normal(2)
        q_noisy = UnitQuaternion.from_axis_angle(axis, sig.sigma_rot * ang) * q if sig.sigma_rot > 0 else q
        T_noisy = RigidTransform(q_noisy, tuple(t + sig.sigma_t * dt))
        px_noisy = (px[0] + sig.sigma_px * dpx[0], px[1] + sig.sigma_px * dpx[1])
        frames.append(FrameObservation(k, T_noisy, cfg.T_PC_true, px_noisy))
    return Acquisition(frames, clean, np.array(pts))


def generate_poses(cfg: SyntheticConfig) -> list[FrameObservation]:
    """Noisy synthetic frames; deterministic given ``cfg.seed``."""
    return acquire(cfg).frames


# -- rendering ------------------------------------------------------------------


def image_to_phantom(frame: FrameObservation, T_UM: RigidTransform) -> RigidTransform:
    """Chain mapping metric image coordinates into the phantom frame."""
    return chain(inverse(frame.T_PC), frame.T_MC, T_UM)


@dataclass(frozen=True)
class ArcTruth:
    center_px: tuple[float, float]
    radius_px: float
    plane_offset_mm: float


def intersection_circle(
    m: PhantomModel, frame: FrameObservation, geom: BScanGeometry, T_UM: RigidTransform
) -> ArcTruth:
    """Circle where the image plane cuts the sphere, in pixel units."""
    if m.kind != "hemisphere":
        raise ValueError("intersection circle is defined for hemisphere phantoms only")
    T_IP = image_to_phantom(frame, T_UM)
    c_img = apply(inverse(T_IP), m.feature())
    radius = m.hemisphere_radius / T_IP.scale
    d = float(c_img[2])
    if abs(d) >= radius:
        raise NoIntersection(f"image plane is {abs(d):.3f} mm from the sphere center (radius {radius:.3f} mm)")
    rho = math.sqrt(radius * radius - d * d)
    # radius in px uses the mean scale; equal for square pixels
    return ArcTruth((c_img[0] / geom.s_x, c_img[1] / geom.s_y), rho / (0.5 * (geom.s_x + geom.s_y)), d)


def _pixel_grid(geom: BScanGeometry):
    v, u = np.mgrid[0 : geom.height, 0 : geom.width].astype(float)
    return u, v


def _line_distance_px(T_IP: RigidTransform, geom, u, v, axis: int, level: float) -> np.ndarray:
    # phantom coordinate ``axis`` is affine in (u, v): distance to its level line in px
    A = T_IP.scale * T_IP.R
    cu, cv = A[axis, 0] * geom.s_x, A[axis, 1] * geom.s_y
    f = cu * u + cv * v + T_IP.t[axis] - level
    n = math.hypot(cu, cv)
    if n < 1e-12:
        return np.full(u.shape, np.inf)
    return np.abs(f) / n


def speckle_field(shape, rng: np.random.Generator, grain_px: float = 1.5) -> np.ndarray:
    """Unit-mean multiplicative speckle with a Rayleigh marginal.

    The envelope of a low-pass filtered circular complex Gaussian field; grain
    size sets the correlation length (0 gives independent pixels).
    """
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    if grain_px > 0:
        re = ndimage.gaussian_filter(re, grain_px, mode="wrap")
        im = ndimage.gaussian_filter(im, grain_px, mode="wrap")
    env = np.hypot(re, im)
    # E|z| for a circular complex Gaussian with per-component variance s^2 is s*sqrt(pi/2)
    s = math.sqrt(0.5 * (re.var() + im.var()))
    return env / (s * math.sqrt(math.pi / 2.0))


def render_bscan(
    m: PhantomModel,
    frame: FrameObservation,
    geom: BScanGeometry,
    T_UM: RigidTransform,
    artifacts: Artifacts = "none",
    seed: int = 0,
    arc_span_deg: float | None = None,
    line_width_px: float = 1.0,
    echoes: bool = False,
    speckle_grain_px: float = 0.0,
    specular_speckle: float = 1.0,
) -> BScanImage:
    """Render a synthetic B-scan of ``m`` seen through the (noiseless) frame chain.

    Hemisphere: the visible dome half of the intersection circle is drawn as a
    bright ridge; ``arc_span_deg`` instead shows a span centered on the side
    facing the transducer. Point and multi_wire phantoms are drawn as blobs
    where the plane crosses the pin or wires; ``echoes`` adds reverberation
    copies below each wire.
    """
    if artifacts not in ("none", "speckle", "speckle+walls"):
        raise ValueError(f"unknown artifacts {artifacts!r}")
    u, v = _pixel_grid(geom)
    T_IP = image_to_phantom(frame, T_UM)
    img = np.zeros(u.shape)
    w2 = 2.0 * line_width_px**2

    if m.kind == "hemisphere":
        arc = intersection_circle(m, frame, geom, T_UM)
        cu, cv = arc.center_px
        du, dv = u - cu, v - cv
        ridge = np.exp(-((np.hypot(du, dv) - arc.radius_px) ** 2) / w2)
        if arc_span_deg is None:
            z_phantom = (T_IP.scale * (T_IP.R[2, 0] * geom.s_x * u + T_IP.R[2, 1] * geom.s_y * v)) + T_IP.t[2]
            visible = z_phantom >= m.feature()[2]
        else:
            # angular distance from straight up (-v)
            phi = np.arctan2(dv, du)
            off = np.abs((phi + np.pi / 2 + np.pi) % (2 * np.pi) - np.pi)
            visible = off <= math.radians(arc_span_deg) / 2 + 1e-12
        img = np.maximum(img, ridge * visible)
    else:
        inv = inverse(T_IP)
        blobs = []
        if m.kind == "point":
            c = apply(inv, m.feature())
            if abs(c[2]) < 1.0 / T_IP.scale:
                blobs.append(c)
        for a, b in m.wires:
            a_i, b_i = apply(inv, np.array(a)), apply(inv, np.array(b))
            dz = b_i[2] - a_i[2]
            if abs(dz) < 1e-12:
                continue
            s = -a_i[2] / dz
            if 0.0 <= s <= 1.0:
                blobs.append(a_i + s * (b_i - a_i))
        for c in blobs:
            bu, bv = c[0] / geom.s_x, c[1] / geom.s_y
            img = np.maximum(img, np.exp(-((u - bu) ** 2 + (v - bv) ** 2) / (2 * (2 * line_width_px) ** 2)))
            if echoes:
                for j in range(1, 4):
                    rv = bv + 6.0 * j * line_width_px
                    img = np.maximum(img, 0.6**j * np.exp(-((u - bu) ** 2 + (v - rv) ** 2) / (2 * (2 * line_width_px) ** 2)))

    if artifacts == "speckle+walls":
        X, Y, Z = m.container
        for axis, level in ((0, 0.0), (0, X), (1, 0.0), (1, Y), (2, 0.0)):
            dist = _line_distance_px(T_IP, geom, u, v, axis, level)
            img = np.maximum(img, 0.8 * np.exp(-(dist**2) / w2))

    background = 0.06
    if artifacts == "none":
        img = background + (1.0 - background) * img
    else:
        S = speckle_field(img.shape, _rng(seed, 2, frame.frame_id), speckle_grain_px)
        # diffuse background is fully speckled; specular echoes only partially
        img = background * S + (1.0 - background) * img * (1.0 + specular_speckle * (S - 1.0))
    pixels = np.clip(np.rint(220.0 * img), 0, 255).astype(np.uint8)
    return BScanImage(geom, pixels)


def generate_dataset(
    cfg: SyntheticConfig, render: bool = True, artifacts: Artifacts = "speckle"
) -> list[FrameObservation]:
    """Noisy frames with B-scans rendered from the noiseless chain."""
    acq = acquire(cfg)
    if not render:
        return acq.frames
    out = []
    for noisy, clean in zip(acq.frames, acq.clean):
        img = render_bscan(cfg.phantom, clean, cfg.geometry, cfg.T_UM_true, artifacts, seed=cfg.seed)
        px = noisy.feature_px
        u = min(max(px[0], 0.0), cfg.geometry.width - 1)
        v = min(max(px[1], 0.0), cfg.geometry.height - 1)
        out.append(replace(noisy, feature_px=(u, v), bscan=img))
    return out


# -- noise study ------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseStudyRow:
    sigma: float
    residual_std: float
    trials: int


def noise_study(
    cfg: SyntheticConfig,
    sigmas: Sequence[float],
    trials: int,
    noise_field: str = "sigma_t",
    mode: Mode = "rigid",
    zero_tol: float = 1e-9,
) -> list[NoiseStudyRow]:
    """Spread of calibration residuals versus noise level.

    For each sigma, ``trials`` datasets are generated (trial i seeded from
    ``(cfg.seed, i)``, shared across sigmas), calibrated, and the population
    standard deviation of all per-pair residual norms is reported. Values
    below ``zero_tol`` mm are round-off and reported as 0.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if noise_field not in ("sigma_t", "sigma_rot", "sigma_px"):
        raise ValueError(f"unknown noise field {noise_field!r}")
    rows = []
    for sigma in sigmas:
        residuals = []
        for i in range(trials):
            trial_cfg = replace(cfg, seed=trial_seed(cfg.seed, i), noise=replace(cfg.noise, **{noise_field: float(sigma)}))
            frames = generate_poses(trial_cfg)
            c = build_correspondences(frames, cfg.phantom, cfg.geometry, cfg.label)
            residuals.append(solve_horn(c, mode).per_pair_residuals)
        std = float(np.concatenate(residuals).std())
        rows.append(NoiseStudyRow(float(sigma), 0.0 if std < zero_tol else std, trials))
    return rows
