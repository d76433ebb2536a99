"""B-scan images and hemisphere landmark detection.

The sphere/plane intersection shows up as a bright arc. Its center is found
with a two-stage Hough transform: edge pixels vote for centers along their
gradient line (2-parameter accumulator), then a histogram of distances from the
winning center gives the radius.

Pixel coordinates are ``(u, v)`` = (column, row); ``v`` grows with depth, away
from the transducer at the top of the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .errors import AmbiguousPeak, MissingFile, NoCircleFound, ParseError


@dataclass(frozen=True)
class BScanGeometry:
    width: int
    height: int
    s_x: float  # mm per pixel along u
    s_y: float  # mm per pixel along v

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.s_x > 0 and self.s_y > 0):
            raise ValueError("pixel scale factors must be positive")

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u <= self.width - 1 and 0.0 <= v <= self.height - 1


@dataclass(frozen=True, eq=False)
class BScanImage:
    geometry: BScanGeometry
    pixels: np.ndarray  # uint8, shape (height, width), row-major

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        g = self.geometry
        if px.shape != (g.height, g.width):
            raise ValueError(f"pixel buffer shape {px.shape} does not match {g.height}x{g.width}")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class CircleDetection:
    center_px: tuple[float, float]  # (a, b) = (u, v), sub-pixel
    radius_px: float
    score: float  # fraction of voting edge pixels supporting the center


@dataclass(frozen=True, eq=False)
class EdgeMap:
    mask: np.ndarray  # bool (H, W)
    direction: np.ndarray  # radians, atan2(dv, du), defined where mask is set
    magnitude: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())


# -- PGM ----------------------------------------------------------------------


def _pgm_tokens(data: bytes, path):
    """Yield (token, end_offset) for the four header fields, skipping comments."""
    i, n = 0, len(data)
    out = []
    while len(out) < 4:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ParseError("truncated PGM header", path)
        out.append(data[start:i])
    return out, i


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into a uint8 array of shape (height, width)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path}: no such file")
    data = path.read_bytes()
    (magic, w, h, maxval), end = _pgm_tokens(data, path)
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})", path)
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}", path) from exc
    if not 0 < maxv <= 255:
        raise ParseError(f"only 8-bit PGM is supported (maxval {maxv})", path)
    body = data[end + 1 :]
    if len(body) < width * height:
        raise ParseError(f"PGM body has {len(body)} bytes, expected {width * height}", path)
    return np.frombuffer(body[: width * height], dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


# -- detection ----------------------------------------------------------------


def detect_edges(img: BScanImage | np.ndarray, grad_threshold: float = 0.3, smooth_sigma: float = 1.0) -> EdgeMap:
    """Central-difference gradient edges above ``grad_threshold * max |grad|``.

    ``smooth_sigma`` (px) applies a Gaussian pre-filter; 0 disables it.
    """
    px = img.pixels if isinstance(img, BScanImage) else np.asarray(img)
    f = px.astype(float)
    if smooth_sigma > 0:
        f = ndimage.gaussian_filter(f, smooth_sigma, mode="nearest")
    gv, gu = np.gradient(f)
    mag = np.hypot(gu, gv)
    # one-sided differences at the border are not trusted
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    peak = mag.max()
    if peak <= 1e-9:
        mask = np.zeros(mag.shape, dtype=bool)
    else:
        mask = mag >= grad_threshold * peak
    return EdgeMap(mask, np.arctan2(gv, gu), mag)


def _box3(a: np.ndarray) -> np.ndarray:
    return ndimage.uniform_filter(a, size=3, mode="constant") * 9.0


def detect_circle(
    img: BScanImage | np.ndarray,
    r_min: float,
    r_max: float,
    *,
    grad_threshold: float = 0.3,
    smooth_sigma: float = 2.0,
    probe_side: str | None = "top",
    axis_reject_deg: float = 10.0,
    min_score: float = 0.05,
    min_votes: int = 10,
    ambiguity: float = 0.05,
    refine: bool = True,
) -> CircleDetection:
    """Locate an arc center and radius.

    probe_side="top" restricts each edge pixel to vote on the deeper side of
    itself, since the arc is convex toward the transducer. Edge pixels whose
    gradient lies within ``axis_reject_deg`` of an image axis are kept out of
    the vote (container walls are straight, axis-aligned lines).
    """
    if not r_min < r_max:
        raise ValueError("r_min must be smaller than r_max")
    if probe_side not in ("top", None):
        raise ValueError(f"unknown probe_side {probe_side!r}")
    px = img.pixels if isinstance(img, BScanImage) else np.asarray(img)
    H, W = px.shape
    if max(H, W) <= 2 * r_min:
        raise ValueError("image is too small for the requested radius range")

    f = px.astype(float)
    if smooth_sigma > 0:
        f = ndimage.gaussian_filter(f, smooth_sigma, mode="nearest")
    edges = detect_edges(f, grad_threshold, 0.0)
    vv, uu = np.nonzero(edges.mask)
    if len(uu) == 0:
        raise NoCircleFound("no edge pixels")
    theta = edges.direction[vv, uu]

    keep = np.ones(len(uu), dtype=bool)
    if axis_reject_deg > 0:
        off = np.abs(((theta + np.pi / 4) % (np.pi / 2)) - np.pi / 4)
        keep &= off > math.radians(axis_reject_deg)
    gu, gv = np.cos(theta), np.sin(theta)
    if probe_side == "top":
        sign = np.sign(gv)
        keep &= sign != 0
        signs = [sign]
    else:
        signs = [np.ones_like(gu), -np.ones_like(gu)]
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        raise NoCircleFound("no usable edge pixels after direction filtering")

    # stage 1: 2-parameter center accumulator, one vote per (pixel, cell)
    d = np.arange(math.ceil(r_min), math.floor(r_max) + 1, dtype=float)
    keys = []
    for s in signs:
        du = (s[idx] * gu[idx])[:, None] * d[None, :]
        dv = (s[idx] * gv[idx])[:, None] * d[None, :]
        cu = np.rint(uu[idx][:, None] + du).astype(np.int64)
        cv = np.rint(vv[idx][:, None] + dv).astype(np.int64)
        ok = (cu >= 0) & (cu < W) & (cv >= 0) & (cv < H)
        pix = np.broadcast_to(np.arange(len(idx))[:, None], cu.shape)
        keys.append(pix[ok] * (H * W) + cv[ok] * W + cu[ok])
    keys = np.unique(np.concatenate(keys))
    acc = np.bincount(keys % (H * W), minlength=H * W).reshape(H, W).astype(float)

    support = _box3(acc)
    pk = int(np.argmax(support))
    b0, a0 = divmod(pk, W)
    peak = support[b0, a0]
    if peak < min_votes:
        raise NoCircleFound(f"accumulator peak {peak:.0f} below {min_votes} votes")

    # sub-pixel center: centroid of the 3x3 accumulator neighborhood
    v_lo, v_hi = max(b0 - 1, 0), min(b0 + 2, H)
    u_lo, u_hi = max(a0 - 1, 0), min(a0 + 2, W)
    win = acc[v_lo:v_hi, u_lo:u_hi]
    wv, wu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
    a = float((win * wu).sum() / win.sum())
    b = float((win * wv).sum() / win.sum())

    # support score: voting pixels whose gradient line passes the center
    wu_, wv_ = a - uu[idx], b - vv[idx]
    sgn = signs[0][idx] if probe_side == "top" else np.ones(len(idx))
    along = sgn * (wu_ * gu[idx] + wv_ * gv[idx])
    perp = np.abs(wu_ * gv[idx] - wv_ * gu[idx])
    if probe_side is None:
        along = np.abs(along)
    hit = (perp <= 1.5) & (along >= r_min - 1) & (along <= r_max + 1)
    score = float(hit.sum()) / len(idx)
    if score < min_score:
        raise NoCircleFound(f"support score {score:.3f} below {min_score}")

    excl = max(5.0, 0.5 * r_min)
    yy, xx = np.ogrid[:H, :W]
    outside = (xx - a0) ** 2 + (yy - b0) ** 2 > excl**2
    second = support[outside].max() if outside.any() else 0.0
    if second >= (1.0 - ambiguity) * peak:
        raise AmbiguousPeak(f"two accumulator peaks within {ambiguity:.0%} ({peak:.0f} vs {second:.0f})")

    # stage 2: radius from the histogram of edge distances to the center
    r = _radius_from_histogram(uu, vv, gu, gv, a, b, r_min, r_max)
    if refine:
        a, b, r, width = _refine_circle(uu, vv, gu, gv, a, b, r, r_min, r_max)
        if width is not None:
            a, b, r = _refine_ridge(f, a, b, r, max(3.0, width), r_min, r_max)
    if not (H > b >= 0 and W > a >= 0):
        raise NoCircleFound("refined center left the image")
    return CircleDetection((a, b), r, score)


def _flank_peak(dist: np.ndarray, r_min: float, r_max: float) -> tuple[float, int]:
    lo = math.floor(r_min - 0.5)
    nbins = int(math.ceil(r_max + 0.5)) - lo
    hist, edges = np.histogram(dist, bins=nbins, range=(lo, lo + nbins))
    k = int(np.argmax(np.convolve(hist, np.ones(3), mode="same")))
    r_peak = 0.5 * (edges[k] + edges[k + 1])
    near = dist[np.abs(dist - r_peak) <= 2.5]
    return float(near.mean()), len(near)


def _radius_from_histogram(uu, vv, gu, gv, a, b, r_min, r_max) -> float:
    """Highest histogram peak of center distances.

    A bright arc has two edge flanks (gradient pointing out on the inner flank,
    in on the outer one); each flank gets its own histogram and the ridge
    radius is their midpoint. A single step edge falls back to one peak.
    """
    du, dv = uu - a, vv - b
    dist = np.hypot(du, dv)
    radial = du * gu + dv * gv
    band = (dist >= r_min - 0.5) & (dist <= r_max + 0.5)
    if not band.any():
        raise NoCircleFound("no edge pixels inside the radius range")
    peaks = []
    for flank in (band & (radial > 0), band & (radial < 0)):
        if flank.sum() >= 5:
            peaks.append(_flank_peak(dist[flank], r_min, r_max))
    if not peaks:
        return _flank_peak(dist[band], r_min, r_max)[0]
    if len(peaks) == 2:
        (r_in, n_in), (r_out, n_out) = peaks
        if 0.0 < r_out - r_in < 0.25 * r_out and min(n_in, n_out) >= 0.25 * max(n_in, n_out):
            return 0.5 * (r_in + r_out)
    return max(peaks, key=lambda p: p[1])[0]


def _refine_circle(uu, vv, gu, gv, a, b, r, r_min, r_max, band: float = 6.0):
    """Robust geometric fit: shared center, one radius per edge flank."""
    du, dv = uu - a, vv - b
    dist = np.hypot(du, dv)
    near = np.abs(dist - r) <= band
    inner = near & (du * gu + dv * gv > 0)
    outer = near & (du * gu + dv * gv < 0)
    if inner.sum() + outer.sum() < 10:
        return a, b, r, None
    x = np.concatenate([uu[inner], uu[outer]]).astype(float)
    y = np.concatenate([vv[inner], vv[outer]]).astype(float)
    is_outer = np.concatenate([np.zeros(inner.sum(), bool), np.ones(outer.sum(), bool)])
    r_in0 = float(dist[inner].mean()) if inner.any() else r
    r_out0 = float(dist[outer].mean()) if outer.any() else r

    def fun(p):
        rad = np.where(is_outer, p[3], p[2])
        return np.hypot(x - p[0], y - p[1]) - rad

    sol = least_squares(fun, [a, b, r_in0, r_out0], loss="soft_l1", f_scale=1.0)
    a2, b2, r_in, r_out = sol.x
    if not sol.success or math.hypot(a2 - a, b2 - b) > band:
        return a, b, r, None
    ridge = inner.any() and outer.any() and 0.0 < r_out - r_in < band
    if ridge:
        r2 = 0.5 * (r_in + r_out)
    else:
        r2 = r_out if outer.sum() >= inner.sum() else r_in
    if not r_min - 1 <= r2 <= r_max + 1:
        return a, b, r, None
    return float(a2), float(b2), float(r2), float(r_out - r_in) if ridge else None


def _refine_ridge(f: np.ndarray, a, b, r, half, r_min, r_max, iters: int = 3):
    """Intensity-weighted fit of the ridge centerline inside an annulus of +-``half`` px.

    Weights are the smoothed intensity above the annulus median, so speckle
    averages out over the whole ridge instead of the few pixels on its flanks.
    """
    H, W = f.shape
    a0, b0, r0 = a, b, r
    for _ in range(iters):
        u_lo, u_hi = max(int(a - r - half) - 1, 0), min(int(a + r + half) + 2, W)
        v_lo, v_hi = max(int(b - r - half) - 1, 0), min(int(b + r + half) + 2, H)
        if u_lo >= u_hi or v_lo >= v_hi:
            return a0, b0, r0
        vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
        ring = np.abs(np.hypot(uu - a, vv - b) - r) <= half
        w = f[v_lo:v_hi, u_lo:u_hi][ring]
        w = np.sqrt(np.clip(w - np.median(w), 0.0, None))
        if np.count_nonzero(w) < 10:
            return a0, b0, r0
        x, y = uu[ring].astype(float), vv[ring].astype(float)
        sol = least_squares(lambda p: w * (np.hypot(x - p[0], y - p[1]) - p[2]), [a, b, r])
        a, b, r = sol.x
    if math.hypot(a - a0, b - b0) > half or abs(r - r0) > half or not r_min - 1 <= r <= r_max + 1:
        return a0, b0, r0
    return float(a), float(b), float(r)


def feature_to_image_point(d: CircleDetection, g: BScanGeometry) -> np.ndarray:
    """Metric image-plane point ``(s_x a, s_y b, 0)`` in mm."""
    a, b = d.center_px
    return np.array([g.s_x * a, g.s_y * b, 0.0])


def pixel_to_image_point(u: float, v: float, g: BScanGeometry) -> np.ndarray:
    return np.array([g.s_x * u, g.s_y * v, 0.0])
