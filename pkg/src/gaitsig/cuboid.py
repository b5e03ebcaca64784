"""Flow cuboids: aligned stacks of consecutive flow maps used as CNN input.

A cuboid has shape ``(60, 60, 2L)``. With 0-based channels, channel ``2k`` is
the horizontal and ``2k + 1`` the vertical flow of step ``k``.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _binio
from .errors import DataError
from .optflow import OpticalFlowMap
from .videoio import SCENARIOS

SUBSEQ_LEN = 25
OVERLAP = 0.8
CROP = 60
SHIFT = 5

# (dx, dy) crop displacements; the identity comes first
AUG_OFFSETS = [(0, 0)] + [(dx, dy) for dy in (-SHIFT, 0, SHIFT) for dx in (-SHIFT, 0, SHIFT) if (dx, dy) != (0, 0)]
N_AUG = 2 * len(AUG_OFFSETS)

NO_LABEL = 0xFFFFFFFF


@dataclass(frozen=True)
class FlowCuboid:
    data: np.ndarray
    label: int = None
    scenario: str = "N"
    center_frame_x: float = float("nan")
    crop_x: int = 0
    subject: str = ""
    sequence: str = ""
    window_start: int = 0
    mean_subtracted: float = None  # set by normalize()

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] % 2:
            raise DataError("cuboid data must be (H, W, 2L), got %s" % (self.data.shape,))

    @property
    def length(self):
        return self.data.shape[2] // 2

    def flow_step(self, k):
        """Flow map of 0-based step ``k``."""
        return OpticalFlowMap(self.data[:, :, 2 * k], self.data[:, :, 2 * k + 1])


@dataclass(frozen=True)
class CuboidSetStats:
    mean: float
    count: int

    def __post_init__(self):
        if not math.isfinite(self.mean) or self.count <= 0:
            raise DataError("invalid stats: mean=%r count=%r" % (self.mean, self.count))


# ---------------------------------------------------------------------------
# window construction


def stack_flows(flows):
    """Interleave flow maps into an ``(H, W, 2 * len(flows))`` array."""
    out = np.empty((flows[0].height, flows[0].width, 2 * len(flows)), dtype=np.float32)
    for k, f in enumerate(flows):
        out[:, :, 2 * k] = f.u
        out[:, :, 2 * k + 1] = f.v
    return out


def window_starts(n_flows, L=SUBSEQ_LEN, overlap=OVERLAP):
    step = max(1, int(round(L * (1.0 - overlap))))
    if n_flows < L:
        return []
    return list(range(0, n_flows - L + 1, step))


def crop_origin(x_center, width, crop=CROP):
    """Left column of a ``crop``-wide window centred on ``x_center``, clamped to the frame."""
    return int(min(max(int(round(x_center)) - crop // 2, 0), width - crop))


def plan_windows(flows, track, L=SUBSEQ_LEN, overlap=OVERLAP, crop=CROP):
    """``(start, crop_x, x_center)`` for every window whose central frame is tracked."""
    if len(flows) < L:
        raise DataError("need at least %d flow maps, got %d" % (L, len(flows)))
    if len(track) < len(flows):
        raise DataError("track shorter than flow sequence")
    width = flows[0].width
    if width < crop:
        raise DataError("flow width %d below crop width %d" % (width, crop))
    plan = []
    for start in window_starts(len(flows), L, overlap):
        centre = start + L // 2  # frame #13 of 25, 1-based
        if not track.valid[centre]:
            continue
        xc = float(track.x_center[centre])
        plan.append((start, crop_origin(xc, width, crop), xc))
    return plan


def build_subsequences(flows, track, L=SUBSEQ_LEN, overlap=OVERLAP, label=None, scenario="N",
                       subject="", sequence="", crop=CROP):
    """Aligned, cropped cuboids from a flow sequence.

    Windows start every ``L * (1 - overlap)`` steps. Windows whose central
    frame has no detected subject are skipped.
    """
    out = []
    for start, cx, xc in plan_windows(flows, track, L, overlap, crop):
        data = stack_flows(flows[start:start + L])[:, cx:cx + crop, :].copy()
        out.append(FlowCuboid(data, label, scenario, xc, cx, subject, sequence, start))
    return out


# ---------------------------------------------------------------------------
# augmentation


def shifted_crop(source, crop_x, dx, dy, size=CROP):
    """Re-cut a ``size`` x ``size`` crop at ``(crop_x + dx, dy)``; out-of-frame cells are zero."""
    H, W, C = source.shape
    out = np.zeros((size, size, C), dtype=source.dtype)
    y0, x0 = dy, crop_x + dx
    ys, ye = max(y0, 0), min(y0 + size, H)
    xs, xe = max(x0, 0), min(x0 + size, W)
    if ys < ye and xs < xe:
        out[ys - y0:ye - y0, xs - x0:xe - x0] = source[ys:ye, xs:xe]
    return out


def mirror_cuboid_data(data):
    """Horizontal flip of a stacked cuboid with sign-flipped horizontal channels."""
    out = data[:, ::-1, :].copy()
    out[:, :, 0::2] *= -1
    return out


def augmented_data(source, crop_x, index):
    """Member ``index`` (0..17) of the augmentation set of one source window."""
    dx, dy = AUG_OFFSETS[index % len(AUG_OFFSETS)]
    data = shifted_crop(source, crop_x, dx, dy)
    if index >= len(AUG_OFFSETS):
        data = mirror_cuboid_data(data)
    return data


def augment(c, source):
    """The 18 training variants of cuboid ``c``.

    ``source`` is the uncropped ``(H, W, 2L)`` window ``c`` was cut from.
    The first 9 members are the identity and 8 shifts of 5 px; the next 9
    are their mirrors.
    """
    out = []
    for i in range(N_AUG):
        data = c.data.copy() if i == 0 else augmented_data(source, c.crop_x, i)
        out.append(replace(c, data=data))
    return out


# ---------------------------------------------------------------------------
# mean normalization


def compute_mean(train):
    """Global scalar mean over every element of every cuboid in ``train``."""
    total = 0.0
    count = 0
    for c in train:
        data = c.data if isinstance(c, FlowCuboid) else np.asarray(c)
        total += float(np.sum(data, dtype=np.float64))
        count += data.size
    if count == 0:
        raise DataError("cannot compute the mean of an empty stream")
    return CuboidSetStats(total / count, count)


def normalize(c, stats):
    """Subtract the dataset mean; the result is float64 so the shift is exactly invertible."""
    if not math.isfinite(stats.mean):
        raise DataError("non-finite mean")
    return replace(c, data=c.data.astype(np.float64) - stats.mean, mean_subtracted=stats.mean)


# ---------------------------------------------------------------------------
# in-memory sample store with streamed augmentation


class CuboidSet:
    """Training samples backed by uncropped source windows.

    With ``augmented=True`` sample ``i`` is augmentation member ``i % 18``
    of window ``i // 18``, generated on demand so the 18x expansion never
    has to be held in memory.
    """

    def __init__(self, windows, crop_x, labels, scenarios, subjects=None, sequences=None,
                 starts=None, augmented=False, mean=None):
        self.windows = windows
        self.crop_x = np.asarray(crop_x, dtype=int)
        self.labels = np.asarray(labels, dtype=int)
        self.scenarios = list(scenarios)
        n = len(self.labels)
        self.subjects = list(subjects) if subjects is not None else [""] * n
        self.sequences = list(sequences) if sequences is not None else [""] * n
        self.starts = list(starts) if starts is not None else [0] * n
        self.augmented = augmented
        self.mean = mean
        if not (len(windows) == len(self.crop_x) == n == len(self.scenarios)):
            raise DataError("inconsistent CuboidSet field lengths")

    @property
    def multiplicity(self):
        return N_AUG if self.augmented else 1

    @property
    def n_windows(self):
        return len(self.labels)

    def __len__(self):
        return self.n_windows * self.multiplicity

    def base_index(self, i):
        return np.asarray(i) // self.multiplicity

    def sample_labels(self):
        return np.repeat(self.labels, self.multiplicity)

    def sample_scenarios(self):
        return [s for s in self.scenarios for _ in range(self.multiplicity)]

    def raw(self, i):
        b, a = divmod(int(i), self.multiplicity)
        if self.augmented:
            return augmented_data(self.windows[b], self.crop_x[b], a)
        cx = self.crop_x[b]
        return np.ascontiguousarray(self.windows[b][:, cx:cx + CROP, :])

    def batch(self, indices, dtype=np.float32):
        """Mean-subtracted ``(len(indices), 60, 60, 2L)`` array."""
        if self.mean is None:
            raise DataError("dataset mean not set; call fit_mean() or assign stats first")
        out = np.stack([self.raw(i) for i in indices]).astype(dtype, copy=False)
        out -= np.asarray(self.mean, dtype=out.dtype)
        return out

    def cuboid(self, i):
        b = int(i) // self.multiplicity
        data = self.raw(i)
        return FlowCuboid(data, int(self.labels[b]), self.scenarios[b], float("nan"), int(self.crop_x[b]),
                          self.subjects[b], self.sequences[b], self.starts[b])

    def iter_cuboids(self):
        for i in range(len(self)):
            yield self.cuboid(i)

    def fit_mean(self):
        stats = compute_mean(self.raw(i) for i in range(len(self)))
        self.mean = stats.mean
        return stats

    def subset(self, window_mask, augmented=None):
        idx = np.flatnonzero(window_mask)
        return CuboidSet(
            self.windows[idx], self.crop_x[idx], self.labels[idx], [self.scenarios[i] for i in idx],
            [self.subjects[i] for i in idx], [self.sequences[i] for i in idx], [self.starts[i] for i in idx],
            self.augmented if augmented is None else augmented, self.mean)

    @classmethod
    def from_cuboids(cls, cuboids, augmented=False, mean=None):
        """Wrap already-cropped cuboids (augmentation then re-cuts inside the crop only)."""
        cuboids = list(cuboids)
        if not cuboids:
            raise DataError("empty cuboid list")
        windows = np.stack([c.data for c in cuboids])
        return cls(windows, [0] * len(cuboids), [c.label if c.label is not None else -1 for c in cuboids],
                   [c.scenario for c in cuboids], [c.subject for c in cuboids], [c.sequence for c in cuboids],
                   [c.window_start for c in cuboids], augmented, mean)


# ---------------------------------------------------------------------------
# GFCB archive


def write_archive(path, cuboids, manifest_extra=None):
    """Write cuboids to a ``GFCB`` archive plus a ``<path>.json`` manifest."""
    cuboids = list(cuboids)
    if not cuboids:
        raise DataError("refusing to write an empty archive")
    h, w, c = cuboids[0].data.shape
    records = []
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFCB", len(cuboids), h, w, c)
        for cb in cuboids:
            if cb.data.shape != (h, w, c):
                raise DataError("cuboids of mixed shape")
            fh.write(np.array([NO_LABEL if cb.label is None else cb.label], dtype="<u4").tobytes())
            fh.write(np.array([SCENARIOS.index(cb.scenario)], dtype="u1").tobytes())
            _binio.write_array(fh, np.transpose(cb.data, (2, 0, 1)), "f4")
            records.append(dict(subject=cb.subject, scenario=cb.scenario, sequence=cb.sequence,
                                window_start=cb.window_start, label=cb.label,
                                center_frame_x=None if math.isnan(cb.center_frame_x) else cb.center_frame_x,
                                crop_x=cb.crop_x, mean_subtracted=cb.mean_subtracted))
    doc = {"format": "gaitsig-cuboids/1", "count": len(cuboids), "shape": [h, w, c], "samples": records}
    doc.update(manifest_extra or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(doc, fh, indent=1)


def read_archive(path):
    """Read a ``GFCB`` archive; metadata is taken from the manifest when present."""
    try:
        with open(str(path) + ".json") as fh:
            records = json.load(fh)["samples"]
    except FileNotFoundError:
        records = None
    out = []
    with open(path, "rb") as fh:
        count, h, w, c = _binio.read_header(fh, b"GFCB", 4)
        for i in range(count):
            label = int(_binio.read_array(fh, "<u4", 1)[0])
            scen = SCENARIOS[int(_binio.read_array(fh, "u1", 1)[0])]
            data = np.ascontiguousarray(_binio.read_array(fh, "f4", c * h * w).reshape(c, h, w).transpose(1, 2, 0))
            rec = records[i] if records else {}
            cx = rec.get("center_frame_x")
            out.append(FlowCuboid(
                data, None if label == NO_LABEL else label, scen,
                float("nan") if cx is None else cx, rec.get("crop_x", 0), rec.get("subject", ""),
                rec.get("sequence", ""), rec.get("window_start", 0), rec.get("mean_subtracted")))
    return out
