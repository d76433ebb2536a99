"""On-disk datasets and the small text formats around them.

Layout of a dataset directory::

    config.txt      key = value [unit] lines, '#' comments
    poses.csv       frame_id, T_MC (qw qx qy qz tx ty tz), T_PC (same)
    features.csv    frame_id,u_px,v_px (frames without a feature are absent)
    images/<id>.pgm optional; if the directory exists every frame needs one

Floats are written with 17 significant digits so that a save/load round trip
reproduces every value exactly. Lengths accept mm, cm or m and angles rad or
deg; the unit tag is mandatory for dimensional keys.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bscan import BScanGeometry, BScanImage, read_pgm, write_pgm
from .calibrate import AXES, AxisStats, CalibrationResult
from .errors import MissingFile, ParseError, UnitError
from .frames import FrameObservation
from .geom3d import RigidTransform, UnitQuaternion
from .phantom import PhantomModel
from .planar_pose import CameraIntrinsics

UNITS = {
    "length": {"mm": 1.0, "cm": 10.0, "m": 1000.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "px": {"px": 1.0},
    "pixel_size": {"mm/px": 1.0, "cm/px": 10.0, "m/px": 1000.0},
    "none": {},
}
CANONICAL = {"length": "mm", "angle": "rad", "px": "px", "pixel_size": "mm/px"}

POSE_HEADER = ["frame_id"] + [
    f"{c}_{grp}"
    for grp in ("MC", "PC")
    for c in ("qw", "qx", "qy", "qz", "tx_mm", "ty_mm", "tz_mm")
]
FEATURE_HEADER = ["frame_id", "u_px", "v_px"]
CORNER_HEADER = ["frame_id", "point_index", "u", "v"]
NOISE_HEADER = ["sigma", "residual_std", "trials"]
BRE_HEADER = ["frame_id", "dx_mm", "dy_mm", "dz_mm"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- key = value files ---------------------------------------------------------


@dataclass
class KeyValues:
    """Parsed ``key = value [unit]`` lines with per-key line numbers."""

    path: Path
    entries: dict[str, tuple[int, str]] = field(default_factory=dict)
    sections: dict[str, list[tuple[int, str]]] = field(default_factory=dict)

    def has(self, key: str) -> bool:
        return key in self.entries

    def keys(self, prefix: str = "") -> list[str]:
        return [k for k in self.entries if k.startswith(prefix)]

    def raw(self, key: str) -> str:
        if key not in self.entries:
            raise ParseError(f"missing key {key!r}", self.path)
        return self.entries[key][1]

    def text(self, key: str, default: str | None = None) -> str:
        if key not in self.entries and default is not None:
            return default
        return self.raw(key)

    def numbers(self, key: str, kind: str = "none", n: int | None = 1) -> list[float]:
        """Values of ``key`` converted to canonical units (mm, rad, px)."""
        line, value = self.entries.get(key, (None, None))
        if value is None:
            raise ParseError(f"missing key {key!r}", self.path)
        tokens = value.split()
        unit = None
        if kind != "none":
            if not tokens or _is_number(tokens[-1]):
                raise UnitError(f"{key}: missing unit (expected one of {sorted(UNITS[kind])})", self.path, line)
            unit = tokens.pop()
            if unit not in UNITS[kind]:
                raise UnitError(f"{key}: unknown unit {unit!r} (expected one of {sorted(UNITS[kind])})", self.path, line)
        elif tokens and not _is_number(tokens[-1]):
            raise UnitError(f"{key}: dimensionless value must not carry a unit ({tokens[-1]!r})", self.path, line)
        if n is not None and len(tokens) != n:
            raise ParseError(f"{key}: expected {n} value(s), got {len(tokens)}", self.path, line)
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"{key}: not a number in {value!r}", self.path, line) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{key}: non-finite value", self.path, line)
        factor = UNITS[kind][unit] if unit else 1.0
        return [v * factor for v in vals] if factor != 1.0 else vals

    def number(self, key: str, kind: str = "none") -> float:
        return self.numbers(key, kind, 1)[0]

    def integer(self, key: str, kind: str = "none") -> int:
        v = self.number(key, kind)
        if v != int(v):
            raise ParseError(f"{key}: expected an integer, got {v}", self.path, self.entries[key][0])
        return int(v)


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$", re.IGNORECASE)


def _is_number(tok: str) -> bool:
    return bool(_NUMBER.match(tok))


def read_key_values(path) -> KeyValues:
    """Parse a key/value file; ``[name]`` starts a raw section kept line by line."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path}: no such file")
    kv = KeyValues(path)
    section = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        s = line.strip()
        if section is not None:
            if s:
                kv.sections[section].append((lineno, s))
            continue
        s = s.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            kv.sections[section] = []
            continue
        if "=" not in s:
            raise ParseError(f"expected 'key = value', got {s!r}", path, lineno)
        key, value = (p.strip() for p in s.split("=", 1))
        if not key:
            raise ParseError("empty key", path, lineno)
        if key in kv.entries:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        kv.entries[key] = (lineno, value)
    return kv


def _kv_line(key: str, values, kind: str = "none") -> str:
    if isinstance(values, str):
        return f"{key} = {values}"
    vals = " ".join(str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in np.atleast_1d(values).tolist())
    unit = CANONICAL.get(kind)
    return f"{key} = {vals} {unit}" if unit else f"{key} = {vals}"


def _transform_lines(prefix: str, T: RigidTransform) -> list[str]:
    return [
        _kv_line(f"{prefix}.q", T.rotation.as_array()),
        _kv_line(f"{prefix}.t", T.t, "length"),
        _kv_line(f"{prefix}.scale", [T.scale]),
    ]


def _read_transform(kv: KeyValues, prefix: str) -> RigidTransform:
    q = kv.numbers(f"{prefix}.q", "none", 4)
    t = kv.numbers(f"{prefix}.t", "length", 3)
    s = kv.number(f"{prefix}.scale") if kv.has(f"{prefix}.scale") else 1.0
    try:
        return RigidTransform(UnitQuaternion(*q), tuple(t), s)
    except ValueError as e:
        raise ParseError(f"{prefix}: {e}", kv.path, kv.entries[f"{prefix}.q"][0]) from None


# -- dataset -----------------------------------------------------------------------


@dataclass(eq=False)
class Dataset:
    root: Path | None
    phantom: PhantomModel
    geometry: BScanGeometry
    frames: list[FrameObservation]
    provenance: str = "external"  # "synthetic" or "external"
    # generator settings and ground truth for synthetic data
    synthetic: dict[str, float | int | str] = field(default_factory=dict)
    T_UM_true: RigidTransform | None = None

    def __post_init__(self):
        if self.provenance not in ("synthetic", "external"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        ids = [f.frame_id for f in self.frames]
        if ids != sorted(set(ids)):
            raise ValueError("frame ids must be unique and sorted")

    @property
    def has_images(self) -> bool:
        return bool(self.frames) and all(f.bscan is not None for f in self.frames)


_SYNTH_KEYS = {
    "seed": "int",
    "n_frames": "int",
    "sigma_t": "length",
    "sigma_rot": "angle",
    "sigma_px": "px",
    "artifacts": "text",
}


def _config_lines(ds: Dataset) -> list[str]:
    m, g = ds.phantom, ds.geometry
    out = ["# uscal dataset", _kv_line("provenance", ds.provenance), "", _kv_line("phantom.kind", m.kind)]
    out.append(_kv_line("phantom.container", m.container, "length"))
    if m.hemisphere_radius is not None:
        out.append(_kv_line("phantom.hemisphere_radius", [m.hemisphere_radius], "length"))
    for label, p in m.features:
        out.append(_kv_line(f"phantom.feature.{label}", p, "length"))
    for i, (a, b) in enumerate(m.wires):
        out.append(_kv_line(f"phantom.wire.{i}", [*a, *b], "length"))
    out += [
        "",
        _kv_line("image.width", [int(g.width)]) + " px",
        _kv_line("image.height", [int(g.height)]) + " px",
        _kv_line("image.sx", [g.s_x], "pixel_size"),
        _kv_line("image.sy", [g.s_y], "pixel_size"),
    ]
    if ds.synthetic:
        out.append("")
        for key, value in ds.synthetic.items():
            kind = _SYNTH_KEYS.get(key)
            if kind is None:
                raise ValueError(f"unknown synthetic setting {key!r}")
            if kind == "text":
                out.append(_kv_line(f"synthetic.{key}", str(value)))
            elif kind == "int":
                out.append(_kv_line(f"synthetic.{key}", [int(value)]))
            else:
                out.append(_kv_line(f"synthetic.{key}", [value], kind))
    if ds.T_UM_true is not None:
        out += [""] + _transform_lines("truth.T_UM", ds.T_UM_true)
    return out


def _phantom_from(kv: KeyValues) -> PhantomModel:
    kind = kv.raw("phantom.kind")
    container = kv.numbers("phantom.container", "length", 3)
    radius = kv.number("phantom.hemisphere_radius", "length") if kv.has("phantom.hemisphere_radius") else None
    feats = tuple(
        (k[len("phantom.feature.") :], tuple(kv.numbers(k, "length", 3))) for k in kv.keys("phantom.feature.")
    )
    wire_keys = sorted(kv.keys("phantom.wire."), key=lambda k: int(k.rsplit(".", 1)[1]) if k.rsplit(".", 1)[1].isdigit() else -1)
    wires = []
    for k in wire_keys:
        w = kv.numbers(k, "length", 6)
        wires.append((tuple(w[:3]), tuple(w[3:])))
    try:
        return PhantomModel(kind, feats, tuple(container), radius, tuple(wires))
    except ValueError as e:
        raise ParseError(f"phantom: {e}", kv.path) from None


def _geometry_from(kv: KeyValues) -> BScanGeometry:
    try:
        return BScanGeometry(
            kv.integer("image.width", "px"),
            kv.integer("image.height", "px"),
            kv.number("image.sx", "pixel_size"),
            kv.number("image.sy", "pixel_size"),
        )
    except ValueError as e:
        raise ParseError(f"image: {e}", kv.path) from None


def _synthetic_from(kv: KeyValues) -> dict:
    out = {}
    for key in kv.keys("synthetic."):
        name = key[len("synthetic.") :]
        kind = _SYNTH_KEYS.get(name)
        if kind is None:
            raise ParseError(f"unknown key {key!r}", kv.path, kv.entries[key][0])
        if kind == "text":
            out[name] = kv.raw(key)
        elif kind == "int":
            out[name] = kv.integer(key)
        else:
            out[name] = kv.number(key, kind)
    return out


_KNOWN_KEYS = {
    "provenance",
    "phantom.kind",
    "phantom.container",
    "phantom.hemisphere_radius",
    "image.width",
    "image.height",
    "image.sx",
    "image.sy",
    "truth.T_UM.q",
    "truth.T_UM.t",
    "truth.T_UM.scale",
}
_KNOWN_PREFIXES = ("phantom.feature.", "phantom.wire.", "synthetic.")


def _check_keys(kv: KeyValues) -> None:
    for key, (line, _) in kv.entries.items():
        if key not in _KNOWN_KEYS and not key.startswith(_KNOWN_PREFIXES):
            raise ParseError(f"unknown key {key!r}", kv.path, line)


def _read_csv(path: Path, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    if not path.is_file():
        raise MissingFile(f"{path}: no such file")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or [h.strip() for h in got] != list(header):
            raise ParseError(f"expected header {','.join(header)}", path, 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            rows.append((reader.line_num, [c.strip() for c in row]))
    return rows


def _parse_row(path, line, cells, int_cols=(0,)):
    out = []
    for i, c in enumerate(cells):
        try:
            v = int(c) if i in int_cols else float(c)
        except ValueError:
            raise ParseError(f"field {i + 1}: not a number: {c!r}", path, line) from None
        if not math.isfinite(v):
            raise ParseError(f"field {i + 1}: non-finite value", path, line)
        out.append(v)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([str(c) if isinstance(c, (int, np.integer, str)) else fmt(c) for c in row])


def _pose_from_cells(vals, path, line) -> tuple[RigidTransform, RigidTransform]:
    try:
        return tuple(RigidTransform(UnitQuaternion(*vals[i : i + 4]), tuple(vals[i + 4 : i + 7])) for i in (1, 8))
    except ValueError as e:
        raise ParseError(str(e), path, line) from None


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise MissingFile(f"{root}: dataset directory not found")
    kv = read_key_values(root / "config.txt")
    _check_keys(kv)
    phantom = _phantom_from(kv)
    geom = _geometry_from(kv)
    provenance = kv.text("provenance", "external")
    if provenance not in ("synthetic", "external"):
        raise ParseError(f"unknown provenance {provenance!r}", kv.path, kv.entries["provenance"][0])
    truth = _read_transform(kv, "truth.T_UM") if kv.has("truth.T_UM.q") else None

    pose_path = root / "poses.csv"
    poses: dict[int, tuple[RigidTransform, RigidTransform]] = {}
    last = None
    for line, cells in _read_csv(pose_path, POSE_HEADER):
        vals = _parse_row(pose_path, line, cells)
        fid = vals[0]
        if last is not None and fid <= last:
            raise ParseError(f"frame_id {fid} is duplicated or out of order", pose_path, line)
        last = fid
        poses[fid] = _pose_from_cells(vals, pose_path, line)

    feat_path = root / "features.csv"
    features: dict[int, tuple[float, float]] = {}
    if feat_path.exists():
        for line, cells in _read_csv(feat_path, FEATURE_HEADER):
            fid, u, v = _parse_row(feat_path, line, cells)
            if fid not in poses:
                raise ParseError(f"feature for unknown frame_id {fid}", feat_path, line)
            if fid in features:
                raise ParseError(f"duplicate feature for frame_id {fid}", feat_path, line)
            features[fid] = (u, v)

    img_dir = root / "images"
    frames = []
    for fid, (T_MC, T_PC) in poses.items():
        img = None
        if img_dir.is_dir():
            pixels = read_pgm(img_dir / f"{fid}.pgm")
            if pixels.shape != (geom.height, geom.width):
                raise ParseError(f"image is {pixels.shape[1]}x{pixels.shape[0]}, config says {geom.width}x{geom.height}", img_dir / f"{fid}.pgm")
            img = BScanImage(geom, pixels)
        try:
            frames.append(FrameObservation(fid, T_MC, T_PC, features.get(fid), img))
        except ValueError as e:
            raise ParseError(str(e), feat_path) from None
    return Dataset(root, phantom, geom, frames, provenance, _synthetic_from(kv), truth)


def save_dataset(ds: Dataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text("\n".join(_config_lines(ds)) + "\n", encoding="utf-8")
    _write_csv(
        root / "poses.csv",
        POSE_HEADER,
        ([f.frame_id, *f.T_MC.rotation.as_array(), *f.T_MC.t, *f.T_PC.rotation.as_array(), *f.T_PC.t] for f in ds.frames),
    )
    _write_csv(
        root / "features.csv",
        FEATURE_HEADER,
        ([f.frame_id, *f.feature_px] for f in ds.frames if f.feature_px is not None),
    )
    if ds.has_images:
        (root / "images").mkdir(exist_ok=True)
        for f in ds.frames:
            write_pgm(root / "images" / f"{f.frame_id}.pgm", f.bscan.pixels)
    ds.root = root
    return root


# -- calibration results ------------------------------------------------------------


def save_result(res: CalibrationResult, path) -> None:
    lines = ["# uscal calibration", _kv_line("mode", res.mode)]
    lines += _transform_lines("T_UM", res.T_UM)
    lines.append(_kv_line("rms_residual", [res.rms_residual], "length"))
    lines.append(_kv_line("frames_used", " ".join(str(i) for i in res.frames_used)))
    for a in AXES:
        s = res.stats[a]
        lines.append(_kv_line(f"bre.{a}", [s.std, s.mean, s.min, s.max], "length") + "  # std mean min max")
    lines += ["", "[bre]", ",".join(BRE_HEADER)]
    lines += [",".join([str(fid)] + [fmt(x) for x in d]) for fid, *d in res.per_frame_bre]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_result(path) -> CalibrationResult:
    kv = read_key_values(path)
    T = _read_transform(kv, "T_UM")
    stats = {a: AxisStats(*kv.numbers(f"bre.{a}", "length", 4)) for a in AXES}
    used = [int(t) for t in kv.text("frames_used", " ").split()]
    rows = kv.sections.get("bre")
    if rows is None:
        raise ParseError("missing [bre] section", kv.path)
    if not rows or rows[0][1].replace(" ", "") != ",".join(BRE_HEADER):
        raise ParseError(f"expected header {','.join(BRE_HEADER)}", kv.path, rows[0][0] if rows else None)
    bre = []
    for line, text in rows[1:]:
        cells = text.split(",")
        if len(cells) != 4:
            raise ParseError(f"expected 4 fields, got {len(cells)}", kv.path, line)
        fid, dx, dy, dz = _parse_row(kv.path, line, cells)
        bre.append((fid, dx, dy, dz))
    return CalibrationResult(T, kv.raw("mode"), bre, stats, used, kv.number("rms_residual", "length"))


# -- planar pose inputs ---------------------------------------------------------------


def load_intrinsics(path) -> CameraIntrinsics:
    kv = read_key_values(path)
    for key, (line, _) in kv.entries.items():
        if key not in ("fx", "fy", "cx", "cy", "width", "height"):
            raise ParseError(f"unknown key {key!r}", kv.path, line)
    size = {k: kv.integer(k, "px") for k in ("width", "height") if kv.has(k)}
    try:
        return CameraIntrinsics(*(kv.number(k, "px") for k in ("fx", "fy", "cx", "cy")), **size)
    except ValueError as e:
        raise ParseError(str(e), kv.path) from None


def save_intrinsics(intr: CameraIntrinsics, path) -> None:
    lines = [_kv_line(k, [getattr(intr, a)], "px") for k, a in (("fx", "f_x"), ("fy", "f_y"), ("cx", "c_x"), ("cy", "c_y"))]
    for k in ("width", "height"):
        if getattr(intr, k) is not None:
            lines.append(_kv_line(k, [int(getattr(intr, k))]) + " px")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corners(path) -> dict[int, np.ndarray]:
    """frame_id -> (N, 2) pixel observations ordered by point_index (0..N-1)."""
    path = Path(path)
    per_frame: dict[int, dict[int, tuple[float, float]]] = {}
    for line, cells in _read_csv(path, CORNER_HEADER):
        fid, idx, u, v = _parse_row(path, line, cells, int_cols=(0, 1))
        pts = per_frame.setdefault(fid, {})
        if idx in pts:
            raise ParseError(f"duplicate point_index {idx} for frame {fid}", path, line)
        pts[idx] = (u, v)
    out = {}
    for fid, pts in sorted(per_frame.items()):
        if sorted(pts) != list(range(len(pts))):
            raise ParseError(f"frame {fid}: point indices must be 0..{len(pts) - 1}", path)
        out[fid] = np.array([pts[i] for i in range(len(pts))])
    return out


def save_corners(corners: dict[int, np.ndarray], path) -> None:
    _write_csv(
        Path(path),
        CORNER_HEADER,
        ([fid, i, u, v] for fid, pts in sorted(corners.items()) for i, (u, v) in enumerate(np.asarray(pts))),
    )


# -- noise study ------------------------------------------------------------------------


def write_noise_csv(rows, path_or_file) -> None:
    if hasattr(path_or_file, "write"):
        w = csv.writer(path_or_file, lineterminator="\n")
        w.writerow(NOISE_HEADER)
        for r in rows:
            w.writerow([fmt(r.sigma), fmt(r.residual_std), str(r.trials)])
    else:
        _write_csv(Path(path_or_file), NOISE_HEADER, ([r.sigma, r.residual_std, r.trials] for r in rows))


def read_noise_csv(path) -> list[tuple[float, float, int]]:
    path = Path(path)
    return [tuple(_parse_row(path, line, cells, int_cols=(2,))) for line, cells in _read_csv(path, NOISE_HEADER)]
