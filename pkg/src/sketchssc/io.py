"""On-disk formats: SVOX voxel grids, DPTH depth maps, camera text, SKPT
checkpoints, dataset manifests, evaluation reports and metric logs.

All binary formats are little-endian. Readers validate magic, version,
sizes and payload length, and raise :class:`FormatError` naming the file
and the byte offset where a check failed.
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .sketch import SketchGrid
from .tsdf import TsdfVolume
from .voxel import GridSpec, SemanticLabelGrid, VoxelGrid, compute_visibility_masks

SVOX_MAGIC = b"SVOX"
DPTH_MAGIC = b"DPTH"
SKPT_MAGIC = b"SKPT"
SVOX_VERSION = 1
SKPT_VERSION = 1
MANIFEST_HEADER = "# sketchssc manifest v1"

TAG_LABELS, TAG_SCALAR, TAG_VECTOR = 0, 1, 2
_SVOX_HEAD = struct.Struct("<4sI3Id3dB")


class FormatError(ValueError):
    """A file violates its format; the message names the file and the problem."""

    def __init__(self, path, message, offset=None):
        where = f"{path}" if offset is None else f"{path} at byte offset {offset}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.offset = offset


class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self.buf = fh.read()
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(self.path, f"truncated while reading {what}: need {n} bytes, "
                                         f"{len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt).copy()

    def magic(self, expected):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(self.path, f"bad magic {got!r}, expected {expected!r}", 0)

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(self.path, f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def _write_bytes(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


# --- SVOX -----------------------------------------------------------------

def encode_svox(spec: GridSpec, values) -> bytes:
    """Serialize a grid payload; the dtype tag follows from the array.

    uint8 ``dims`` arrays are labels (tag 0), float ``dims`` arrays are
    scalars (tag 1) and float ``dims + (C,)`` arrays are vectors (tag 2).
    Floats are stored as f32; the payload is C order over ``(x, y, z[, c])``.
    """
    a = np.asarray(values)
    if a.shape[:3] != spec.dims or a.ndim not in (3, 4):
        raise ValueError(f"payload shape {a.shape} does not match dims {spec.dims}")
    if a.ndim == 3 and a.dtype in (np.uint8, np.bool_):
        tag, payload, extra = TAG_LABELS, a.astype("<u1"), b""
    elif np.issubdtype(a.dtype, np.floating) and a.ndim == 3:
        tag, payload, extra = TAG_SCALAR, a.astype("<f4"), b""
    elif np.issubdtype(a.dtype, np.floating):
        tag, payload, extra = TAG_VECTOR, a.astype("<f4"), struct.pack("<I", a.shape[3])
    else:
        raise ValueError(f"unsupported payload dtype {a.dtype} with shape {a.shape}")
    head = _SVOX_HEAD.pack(SVOX_MAGIC, SVOX_VERSION, *spec.dims, spec.voxel_size,
                           *spec.origin, tag)
    return head + extra + np.ascontiguousarray(payload).tobytes()


def write_svox(path, spec: GridSpec, values):
    _write_bytes(path, encode_svox(spec, values))


def read_svox(path, expect_tag=None):
    """Returns ``(GridSpec, array, tag)``; labels come back as uint8, floats as float32."""
    r = _Reader(path)
    r.magic(SVOX_MAGIC)
    (version,) = r.unpack("<I", "version")
    if version != SVOX_VERSION:
        raise FormatError(path, f"unsupported SVOX version {version}", 4)
    dims = r.unpack("<3I", "dims")
    voxel_size = r.unpack("<d", "voxel_size")[0]
    origin = r.unpack("<3d", "origin")
    tag_at = r.pos
    (tag,) = r.unpack("<B", "dtype tag")
    if tag not in (TAG_LABELS, TAG_SCALAR, TAG_VECTOR):
        raise FormatError(path, f"unknown dtype tag {tag}", tag_at)
    if expect_tag is not None and tag != expect_tag:
        raise FormatError(path, f"dtype tag {tag} where {expect_tag} was expected", tag_at)
    try:
        spec = GridSpec(dims, voxel_size, origin)
    except ValueError as exc:
        raise FormatError(path, f"invalid grid header: {exc}", 8) from None
    n = spec.num_voxels
    if tag == TAG_LABELS:
        data = r.array("<u1", n, "label payload").reshape(dims)
    elif tag == TAG_SCALAR:
        data = r.array("<f4", n, "scalar payload").reshape(dims)
    else:
        (c,) = r.unpack("<I", "channel count")
        if c < 1:
            raise FormatError(path, "channel count must be positive", r.pos - 4)
        data = r.array("<f4", n * c, "vector payload").reshape(dims + (c,))
    r.finish()
    return spec, data, tag


def write_labels(path, labels: SemanticLabelGrid):
    write_svox(path, labels.spec, labels.labels)


def read_labels(path, num_classes) -> SemanticLabelGrid:
    spec, data, _ = read_svox(path, TAG_LABELS)
    try:
        return SemanticLabelGrid(spec, data, num_classes)
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def write_sketch(path, sketch: SketchGrid):
    write_svox(path, sketch.spec, np.asarray(sketch.mask, dtype=np.uint8))


def read_sketch(path) -> SketchGrid:
    spec, data, _ = read_svox(path, TAG_LABELS)
    if data.max(initial=0) > 1:
        raise FormatError(path, "sketch payload must hold only 0 and 1")
    return SketchGrid(VoxelGrid(spec, data.astype(bool)))


def write_tsdf(path, vol: TsdfVolume):
    write_svox(path, vol.spec, np.asarray(vol.values, dtype=np.float32))


def read_tsdf(path, truncation) -> TsdfVolume:
    spec, data, _ = read_svox(path, TAG_SCALAR)
    return TsdfVolume(VoxelGrid(spec, data), truncation)


# --- DPTH -----------------------------------------------------------------

def encode_depth(depth) -> bytes:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {d.shape}")
    h, w = d.shape
    return DPTH_MAGIC + struct.pack("<II", w, h) + np.ascontiguousarray(d, dtype="<f4").tobytes()


def write_depth(path, depth):
    _write_bytes(path, encode_depth(depth))


def read_depth(path):
    """Depth map ``(H, W)`` as float32 meters, 0 marking invalid pixels."""
    r = _Reader(path)
    r.magic(DPTH_MAGIC)
    w, h = r.unpack("<II", "width/height")
    if w == 0 or h == 0:
        raise FormatError(path, f"empty depth map {w}x{h}", 4)
    data = r.array("<f4", w * h, "depth payload").reshape(h, w)
    r.finish()
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise FormatError(path, "depth values must be finite and non-negative")
    return data


# --- camera text ----------------------------------------------------------

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy")
_EXTRINSIC_KEYS = tuple(f"e{i}{j}" for i in range(3) for j in range(4))


def format_camera(camera: CameraModel) -> str:
    k, e = camera.intrinsics, camera.extrinsics
    lines = [" ".join(f"{name}={float(v)!r}" for name, v in
                      zip(_INTRINSIC_KEYS, (k[0, 0], k[1, 1], k[0, 2], k[1, 2])))]
    for i in range(3):
        lines.append(" ".join(f"e{i}{j}={float(e[i, j])!r}" for j in range(4)))
    return "\n".join(lines) + "\n"


def parse_camera(text, path="<camera>") -> CameraModel:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        for token in line.split():
            key, sep, raw = token.partition("=")
            if not sep:
                raise FormatError(path, f"line {lineno}: expected key=value, got {token!r}")
            if key not in _INTRINSIC_KEYS + _EXTRINSIC_KEYS:
                raise FormatError(path, f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise FormatError(path, f"line {lineno}: duplicate key {key!r}")
            try:
                values[key] = float(raw)
            except ValueError:
                raise FormatError(path, f"line {lineno}: {key} is not a number: {raw!r}") from None
    missing = [k for k in _INTRINSIC_KEYS + _EXTRINSIC_KEYS if k not in values]
    if missing:
        raise FormatError(path, f"missing keys {missing}")
    ext = np.array([values[k] for k in _EXTRINSIC_KEYS]).reshape(3, 4)
    try:
        return CameraModel.from_params(*(values[k] for k in _INTRINSIC_KEYS), extrinsics=ext)
    except ValueError as exc:
        raise FormatError(path, f"invalid camera: {exc}") from None


def write_camera(path, camera: CameraModel):
    with open(path, "w") as fh:
        fh.write(format_camera(camera))


def read_camera(path) -> CameraModel:
    with open(path) as fh:
        return parse_camera(fh.read(), path)


# --- SKPT -----------------------------------------------------------------

def encode_checkpoint(state) -> bytes:
    """``state`` maps names to arrays; order is preserved, data stored as f64."""
    parts = [SKPT_MAGIC, struct.pack("<II", SKPT_VERSION, len(state))]
    for name, value in state.items():
        a = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def write_checkpoint(path, state):
    _write_bytes(path, encode_checkpoint(state))


def read_checkpoint(path):
    r = _Reader(path)
    r.magic(SKPT_MAGIC)
    version, count = r.unpack("<II", "version/count")
    if version != SKPT_VERSION:
        raise FormatError(path, f"unsupported SKPT version {version}", 4)
    state = OrderedDict()
    for _ in range(count):
        at = r.pos
        (n,) = r.unpack("<I", "name length")
        try:
            name = r.take(n, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(path, "record name is not UTF-8", at + 4) from None
        if name in state:
            raise FormatError(path, f"duplicate record {name!r}", at)
        (ndim,) = r.unpack("<I", "ndim")
        shape = r.unpack(f"<{ndim}I", "shape") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        state[name] = r.array("<f8", size, f"data of {name!r}").reshape(shape)
    r.finish()
    return state


def save_model(path, model):
    write_checkpoint(path, model.state_dict())


def load_model(path, model):
    """Load a checkpoint into ``model``; architecture mismatches raise FormatError."""
    state = read_checkpoint(path)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise FormatError(path, f"checkpoint does not fit the model: {exc}") from None
    return model


# --- dataset manifest -----------------------------------------------------

FILE_KINDS = ("labels", "sketch", "tsdf", "depth", "camera", "rgb")


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    seed: int
    files: dict


@dataclass(frozen=True)
class Manifest:
    spec: GridSpec
    num_classes: int
    truncation: float
    seed: int
    entries: tuple


def format_manifest(m: Manifest) -> str:
    s = m.spec
    lines = [
        MANIFEST_HEADER,
        "dims " + " ".join(str(d) for d in s.dims),
        f"voxel_size {s.voxel_size!r}",
        "origin " + " ".join(repr(o) for o in s.origin),
        f"num_classes {m.num_classes}",
        f"truncation {m.truncation!r}",
        f"seed {m.seed}",
        f"count {len(m.entries)}",
    ]
    for e in m.entries:
        files = " ".join(f"{k}={e.files[k]}" for k in FILE_KINDS)
        lines.append(f"sample {e.index} {e.seed} {files}")
    return "\n".join(lines) + "\n"


def parse_manifest(text, path="<manifest>") -> Manifest:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(path, f"first line must be {MANIFEST_HEADER!r}")
    head, entries = {}, []
    for lineno, line in enumerate(lines[1:], 2):
        key, *rest = line.split()
        try:
            if key == "sample":
                idx, seed, *files = rest
                fmap = dict(f.split("=", 1) for f in files)
                if sorted(fmap) != sorted(FILE_KINDS):
                    raise ValueError(f"sample needs files {FILE_KINDS}, got {sorted(fmap)}")
                entries.append(ManifestEntry(int(idx), int(seed), fmap))
            elif key in ("dims", "origin"):
                head[key] = tuple((int if key == "dims" else float)(v) for v in rest)
            elif key in ("voxel_size", "truncation"):
                head[key] = float(rest[0])
            elif key in ("num_classes", "seed", "count"):
                head[key] = int(rest[0])
            else:
                raise ValueError(f"unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            raise FormatError(path, f"line {lineno}: {exc}") from None
    missing = {"dims", "voxel_size", "origin", "num_classes", "truncation", "seed", "count"} - set(head)
    if missing:
        raise FormatError(path, f"missing header records {sorted(missing)}")
    if head["count"] != len(entries):
        raise FormatError(path, f"count {head['count']} but {len(entries)} sample records")
    try:
        spec = GridSpec(head["dims"], head["voxel_size"], head["origin"])
    except ValueError as exc:
        raise FormatError(path, f"invalid grid: {exc}") from None
    return Manifest(spec, head["num_classes"], head["truncation"], head["seed"], tuple(entries))


def write_manifest(path, m: Manifest):
    with open(path, "w") as fh:
        fh.write(format_manifest(m))


def read_manifest(path) -> Manifest:
    with open(path) as fh:
        return parse_manifest(fh.read(), path)


def write_dataset(out_dir, samples, num_classes, truncation, seed):
    """Write every sample's files plus ``manifest.txt``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        stem = f"scene_{i:04d}"
        files = {
            "labels": f"{stem}_labels.svox", "sketch": f"{stem}_sketch.svox",
            "tsdf": f"{stem}_tsdf.svox", "depth": f"{stem}.dpth",
            "camera": f"{stem}_camera.txt", "rgb": f"{stem}_rgb.npy",
        }
        p = {k: os.path.join(out_dir, v) for k, v in files.items()}
        write_labels(p["labels"], s.labels)
        write_sketch(p["sketch"], s.sketch)
        write_tsdf(p["tsdf"], s.tsdf)
        write_depth(p["depth"], s.depth)
        write_camera(p["camera"], s.camera)
        np.save(p["rgb"], np.asarray(s.rgb, dtype=np.float64))
        entries.append(ManifestEntry(i, int(s.seed if s.seed is not None else 0), files))
    spec = samples[0].spec if samples else None
    if spec is None:
        raise ValueError("no samples to write")
    path = os.path.join(out_dir, "manifest.txt")
    write_manifest(path, Manifest(spec, num_classes, truncation, seed, tuple(entries)))
    return path


def read_dataset(manifest_path):
    """Load the samples listed in a manifest; masks are recomputed from depth."""
    from .pipeline.synthetic import SceneSample

    m = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for e in m.entries:
        p = {k: os.path.join(base, v) for k, v in e.files.items()}
        labels = read_labels(p["labels"], m.num_classes)
        sketch = read_sketch(p["sketch"])
        tsdf = read_tsdf(p["tsdf"], m.truncation)
        depth = read_depth(p["depth"]).astype(np.float64)
        camera = read_camera(p["camera"])
        try:
            rgb = np.load(p["rgb"], allow_pickle=False)
        except (ValueError, OSError) as exc:
            raise FormatError(p["rgb"], f"unreadable RGB array: {exc}") from None
        for name, grid in (("sketch", sketch.spec), ("tsdf", tsdf.spec)):
            if grid != labels.spec:
                raise FormatError(p[name], f"grid {grid} differs from the label grid {labels.spec}")
        if labels.spec != m.spec:
            raise FormatError(p["labels"], "grid differs from the manifest header")
        if rgb.shape != depth.shape + (3,):
            raise FormatError(p["rgb"], f"RGB shape {rgb.shape} does not match depth {depth.shape}")
        masks = compute_visibility_masks(depth, camera, labels.spec)
        samples.append(SceneSample(rgb, depth, camera, labels, tsdf, sketch, masks, e.seed))
    return m, samples


# --- reports and metric logs ----------------------------------------------

def write_report(path, report):
    """Machine-readable summary with the fixed report keys."""
    data = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def read_report(path):
    from .pipeline.metrics import EvalReport

    try:
        with open(path) as fh:
            data = json.load(fh)
        return EvalReport.from_dict(data)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise FormatError(path, f"not a valid report: {exc}") from None


def append_metrics(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_metrics(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(path, f"line {lineno}: {exc}") from None
    return out
