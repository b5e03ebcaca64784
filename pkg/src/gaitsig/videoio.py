"""Frame-sequence ingestion, resizing and coarse subject localization.

Sequences live on disk either as a directory of numbered images
(``frame_000001.png`` ...) or as a ``GFSQ`` planar blob. A JSON *layout*
file maps subject / scenario / sequence ids onto those paths.
"""

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _binio
from .errors import DataError

WORK_WIDTH = 80
WORK_HEIGHT = 60

SCENARIOS = ("N", "B", "S", "TN", "TB", "TS")

BG_WINDOW = 25
BG_THRESHOLD = 0.1
MIN_FG_AREA = 20

_FRAME_RE = re.compile(r"^frame_(\d+)\.(png|pgm|bmp|jpe?g|tiff?)$", re.IGNORECASE)
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FrameSequence:
    """Grayscale frames stacked as a ``(T, H, W)`` float array in [0, 1]."""

    frames: np.ndarray
    source_id: str = ""
    fps: float = 25.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[0] == 0:
            raise DataError("expected a non-empty (T, H, W) frame stack, got shape %s" % (frames.shape,))
        if not np.all(np.isfinite(frames)):
            raise DataError("non-finite intensities in %r" % self.source_id)
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise DataError("intensities outside [0, 1] in %r" % self.source_id)
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    def mirrored(self):
        return FrameSequence(self.frames[:, :, ::-1].copy(), self.source_id + ":mirror", self.fps)


@dataclass(frozen=True)
class TrackEstimate:
    """Per-frame horizontal centroid; ``x_center`` is NaN where ``valid`` is False."""

    x_center: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.valid)


# ---------------------------------------------------------------------------
# dataset layout


@dataclass
class SequenceEntry:
    subject: str
    scenario: str
    sequence: str
    path: str
    meta: dict = field(default_factory=dict)


class DatasetLayout:
    """JSON manifest mapping (subject, scenario, sequence) to on-disk sequences.

    Layout file format::

        {"format": "gaitsig-layout/1",
         "fps": 25.0,
         "subjects": {"s000": {"gender": "M"}, ...},
         "sequences": [{"subject": "s000", "scenario": "N", "sequence": "N1",
                        "path": "s000/N1.gfsq", ...extra metadata...}, ...]}

    Relative paths are resolved against the directory holding the file.
    """

    FORMAT = "gaitsig-layout/1"

    def __init__(self, root, entries, subjects=None, fps=25.0):
        self.root = os.fspath(root)
        self.entries = list(entries)
        self.subjects = dict(subjects or {})
        self.fps = float(fps)

    @classmethod
    def load(cls, path):
        path = os.fspath(path)
        if os.path.isdir(path):
            path = os.path.join(path, "layout.json")
        if not os.path.exists(path):
            raise DataError("layout file not found: %s" % path)
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != cls.FORMAT:
            raise DataError("unsupported layout format %r" % doc.get("format"))
        entries = []
        for rec in doc["sequences"]:
            rec = dict(rec)
            scen = rec.pop("scenario")
            if scen not in SCENARIOS:
                raise DataError("unknown scenario code %r" % scen)
            entries.append(SequenceEntry(rec.pop("subject"), scen, rec.pop("sequence"), rec.pop("path"), rec))
        return cls(os.path.dirname(os.path.abspath(path)), entries, doc.get("subjects"), doc.get("fps", 25.0))

    def save(self, path):
        doc = {
            "format": self.FORMAT,
            "fps": self.fps,
            "subjects": self.subjects,
            "sequences": [
                dict(subject=e.subject, scenario=e.scenario, sequence=e.sequence, path=e.path, **e.meta)
                for e in self.entries
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)

    def resolve(self, entry):
        if os.path.isabs(entry.path):
            return entry.path
        return os.path.join(self.root, entry.path)

    def select(self, subjects=None, scenarios=None, sequences=None):
        out = []
        for e in self.entries:
            if subjects is not None and e.subject not in subjects:
                continue
            if scenarios is not None and e.scenario not in scenarios:
                continue
            if sequences is not None and e.sequence not in sequences:
                continue
            out.append(e)
        return out

    def read(self, entry):
        """Load the :class:`FrameSequence` for one entry."""
        return load_sequence(self.resolve(entry), fps=self.fps,
                             source_id="%s/%s" % (entry.subject, entry.sequence))


# ---------------------------------------------------------------------------
# reading / writing sequences


def _to_gray(img):
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return arr / (65535.0 if img.mode.startswith("I;16") else max(arr.max(), 1.0))
    if img.mode == "F":
        return np.asarray(img, dtype=np.float64)
    if img.mode in ("L", "P", "1"):
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return rgb @ _LUMA


def _read_frame_dir(path):
    numbered = []
    for name in os.listdir(path):
        m = _FRAME_RE.match(name)
        if m:
            numbered.append((int(m.group(1)), name))
    if not numbered:
        raise DataError("no frame_NNNNNN images in %s" % path)
    numbered.sort()
    frames = []
    for _, name in numbered:
        fpath = os.path.join(path, name)
        try:
            with Image.open(fpath) as img:
                img.load()
                gray = _to_gray(img)
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError("unreadable frame %s: %s" % (fpath, exc)) from exc
        if frames and gray.shape != frames[0].shape:
            raise DataError("frame %s has size %s, expected %s" % (fpath, gray.shape, frames[0].shape))
        frames.append(gray)
    return np.stack(frames).astype(np.float32)


def _read_gfsq(path):
    with open(path, "rb") as fh:
        width, height, count = _binio.read_header(fh, b"GFSQ", 3)
        payload = fh.read()
    n = width * height * count
    if len(payload) == n:
        data = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    elif len(payload) == 4 * n:
        data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    else:
        raise DataError("%s: payload of %d bytes matches neither u8 nor f32 planes" % (path, len(payload)))
    return np.clip(data.reshape(count, height, width), 0.0, 1.0)


def write_gfsq(path, frames, dtype="f4"):
    """Write a ``(T, H, W)`` stack as a ``GFSQ`` blob (``dtype`` ``'f4'`` or ``'u1'``)."""
    frames = np.asarray(frames)
    count, height, width = frames.shape
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFSQ", width, height, count)
        if dtype == "u1":
            fh.write(np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8).tobytes())
        else:
            _binio.write_array(fh, frames, "f4")


def write_frame_dir(path, frames):
    os.makedirs(path, exist_ok=True)
    for i, frame in enumerate(np.asarray(frames), start=1):
        img = Image.fromarray(np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8), mode="L")
        img.save(os.path.join(path, "frame_%06d.png" % i))


def load_sequence(path, layout=None, fps=25.0, source_id=None):
    """Read a sequence from a frame directory or a ``.gfsq`` blob.

    ``layout`` (a :class:`DatasetLayout`) only serves to resolve relative
    paths and supply the frame rate.
    """
    path = os.fspath(path)
    if layout is not None:
        if not os.path.isabs(path):
            path = os.path.join(layout.root, path)
        fps = layout.fps
    if not os.path.exists(path):
        raise DataError("sequence path does not exist: %s" % path)
    if os.path.isdir(path):
        frames = _read_frame_dir(path)
    else:
        frames = _read_gfsq(path)
    return FrameSequence(frames, source_id or path, fps)


# ---------------------------------------------------------------------------
# resizing


def _interp_matrix(n_out, n_in, scale, offset):
    """Rows of linear-interpolation weights, half-pixel centred, edge-clamped."""
    src = (np.arange(n_out) + 0.5 + offset) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def resize_sequence(seq, width=WORK_WIDTH, height=WORK_HEIGHT):
    """Bilinearly resample every frame to ``width`` x ``height``.

    Sources whose aspect ratio differs from the target are scaled to cover
    the target and the excess dimension is centre-cropped.
    """
    if width <= 0 or height <= 0:
        raise ValueError("target size must be positive")
    if len(seq) == 0:
        raise DataError("empty sequence")
    h_in, w_in = seq.height, seq.width
    if (h_in, w_in) == (height, width):
        return FrameSequence(seq.frames.copy(), seq.source_id, seq.fps)
    scale = max(width / w_in, height / h_in)
    ry = _interp_matrix(height, h_in, scale, (h_in * scale - height) / 2.0)
    rx = _interp_matrix(width, w_in, scale, (w_in * scale - width) / 2.0)
    out = np.einsum("yh,thw,xw->tyx", ry, seq.frames.astype(np.float64), rx, optimize=True)
    return FrameSequence(np.clip(out, 0.0, 1.0).astype(np.float32), seq.source_id, seq.fps)


# ---------------------------------------------------------------------------
# localization


def median_background(frames, window=BG_WINDOW):
    """Per-pixel running median over a temporal window centred on each frame."""
    frames = np.asarray(frames)
    T = frames.shape[0]
    half = window // 2
    bg = np.empty_like(frames)
    for t in range(T):
        lo = max(0, min(t - half, T - window))
        hi = min(T, lo + window)
        bg[t] = np.median(frames[lo:hi], axis=0)
    return bg


def localize_subject(seq, threshold=BG_THRESHOLD, min_area=MIN_FG_AREA, window=BG_WINDOW):
    """Rough x-location of the moving subject in every frame.

    The foreground mask is ``|frame - running median| > threshold``; the
    centroid weights each foreground pixel by that absolute difference.
    """
    if len(seq) < 5:
        raise DataError("localization needs at least 5 frames, got %d" % len(seq))
    frames = seq.frames.astype(np.float64)
    diff = np.abs(frames - median_background(frames, window))
    mask = diff > threshold
    area = mask.sum(axis=(1, 2))
    weights = np.where(mask, diff, 0.0).sum(axis=1)  # (T, W) column weights
    total = weights.sum(axis=1)
    cols = np.arange(seq.width, dtype=np.float64)
    valid = (area >= min_area) & (total > 0)
    x_center = np.full(len(seq), np.nan)
    x_center[valid] = (weights[valid] @ cols) / total[valid]
    return TrackEstimate(x_center, valid)
