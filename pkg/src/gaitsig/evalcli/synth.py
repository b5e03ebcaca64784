"""Synthetic walkers: a desk-scale stand-in for a real gait corpus.

Each subject is a textured body rectangle with a head and two legs whose
feet swing sinusoidally with a subject-specific frequency, phase and
amplitude. Scenario ``B`` attaches a bag to the body, ``S`` damps the leg
swing by 30 %, and the elapsed-time scenarios ``TN/TB/TS`` re-render the
same subjects with jittered frequency and new clothing.
"""

import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage

from ..errors import DataError
from ..videoio import DatasetLayout, SequenceEntry, write_frame_dir, write_gfsq

DEFAULT_SEQUENCES = {
    "N": ["N1", "N2", "N3", "N4", "N5", "N6"],
    "B": ["B1", "B2"],
    "S": ["S1", "S2"],
}
ELAPSED_SEQUENCES = {
    "TN": ["TN1", "TN2", "TN3", "TN4", "TN5", "TN6"],
    "TB": ["TB1", "TB2"],
    "TS": ["TS1", "TS2"],
}
SHOE_DAMPING = 0.7
ELAPSED_JITTER = 0.1


@dataclass(frozen=True)
class SubjectParams:
    freq: float  # gait cycles per second
    phase: float  # radians
    amplitude: float  # foot swing, px
    speed: float  # px / frame
    body_size: float  # torso height, px
    clothing: float = 0.85  # torso brightness
    gender: str = "M"


@dataclass
class SynthSpec:
    n_subjects: int = 8
    frames: int = 45
    width: int = 80
    height: int = 60
    fps: float = 25.0
    sequences: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SEQUENCES.items()})
    elapsed_subjects: list = field(default_factory=list)  # subject indices also rendered as TN/TB/TS
    noise: float = 0.01
    seed: int = 0
    subjects: list = None  # explicit SubjectParams; generated when None
    female_fraction: float = 0.375

    def validate(self):
        if self.n_subjects < 1 or self.frames < 2:
            raise DataError("need at least one subject and two frames")
        if self.width < 16 or self.height < 16:
            raise DataError("frame size too small to render a walker")
        params = self.subject_params()
        keys = {(p.freq, p.amplitude, p.speed, p.body_size) for p in params}
        if len(keys) != len(params):
            raise DataError("subject parameter vectors must be pairwise distinct")
        for p in params:
            if not (0 < p.freq * 2 < self.fps and 0 < p.amplitude < self.height / 4
                    and 0 <= p.speed and 4 <= p.body_size < self.height * 0.6):
                raise DataError("subject parameters outside renderable bounds: %s" % (p,))

    def subject_params(self):
        if self.subjects is not None:
            if len(self.subjects) != self.n_subjects:
                raise DataError("explicit subject list length differs from n_subjects")
            return list(self.subjects)
        return default_subjects(self.n_subjects, self.seed, self.female_fraction)


def default_subjects(n, seed=0, female_fraction=0.375):
    """Well-separated gait parameters: each attribute on its own shuffled grid."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.5])
    perms = [rng.permutation(n) for _ in range(4)]
    n_female = int(round(female_fraction * n))
    # smaller bodies for the 'F' tag so gender is recoverable from gait
    size_rank = np.argsort(np.argsort(grid[perms[3]]))
    out = []
    for i in range(n):
        out.append(SubjectParams(
            freq=float(0.8 + 1.0 * grid[perms[0][i]]),
            phase=float(rng.uniform(0, 2 * np.pi)),
            amplitude=float(2.5 + 3.5 * grid[perms[1][i]]),
            speed=float(0.6 + 0.6 * grid[perms[2][i]]),
            body_size=float(18.0 + 10.0 * grid[perms[3][i]]),
            clothing=float(rng.uniform(0.75, 0.95)),
            gender="F" if size_rank[i] < n_female else "M",
        ))
    return out


# ---------------------------------------------------------------------------
# rasterization


def _coverage(lo, hi, n):
    """Fraction of each unit cell ``[i, i+1)`` covered by the interval ``[lo, hi)``."""
    edges = np.arange(n + 1, dtype=np.float64)
    return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, 1.0)


def _paint(img, alpha, value):
    img *= 1.0 - alpha
    img += alpha * value


def _rect(img, x0, x1, y0, y1, value):
    H, W = img.shape
    alpha = np.outer(_coverage(y0, y1, H), _coverage(x0, x1, W))
    _paint(img, alpha, value)


def _slanted_bar(img, x_top, x_bot, y0, y1, width, value):
    """Bar from ``(x_top, y0)`` to ``(x_bot, y1)``, antialiased row by row."""
    H, W = img.shape
    alpha = np.zeros_like(img)
    rows = np.arange(int(np.floor(y0)), int(np.ceil(y1)))
    for r in rows:
        if r < 0 or r >= H:
            continue
        vy = _coverage(y0, y1, H)[r]
        t = (r + 0.5 - y0) / max(y1 - y0, 1e-9)
        xc = x_top + (x_bot - x_top) * np.clip(t, 0.0, 1.0)
        alpha[r] = vy * _coverage(xc - width / 2, xc + width / 2, W)
    _paint(img, alpha, value)


def make_background(width, height, seed):
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.random((height, width)), 2.0, mode="wrap")
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return 0.15 + 0.2 * tex


def render_sequence(p, spec, direction=1, bag=False, damping=1.0, background=None, rng=None, cloth_seed=0):
    """Frames ``(T, H, W)`` and the ground-truth body-centre trajectory."""
    rng = rng if rng is not None else np.random.default_rng(0)
    H, W, T = spec.height, spec.width, spec.frames
    bg = background if background is not None else make_background(W, H, spec.seed)
    crng = np.random.default_rng(cloth_seed)
    stripes = p.clothing + 0.08 * np.sign(np.sin(np.arange(64) * crng.uniform(0.8, 1.6) + crng.uniform(0, 6)))
    torso_w = 0.4 * p.body_size
    leg_len = 0.8 * p.body_size
    head = 0.3 * p.body_size
    total = head + p.body_size + leg_len
    top0 = (H - total) / 2.0
    frames = np.empty((T, H, W), dtype=np.float32)
    traj = np.empty(T)
    for t in range(T):
        omega_t = 2 * np.pi * p.freq * t / spec.fps + p.phase
        xc = W / 2.0 + direction * p.speed * (t - (T - 1) / 2.0)
        bob = 0.08 * p.amplitude * np.cos(2 * omega_t)
        traj[t] = xc
        img = bg.copy()
        y_head = top0 + bob
        y_torso = y_head + head
        y_hip = y_torso + p.body_size
        # legs first so the torso overlaps the hips
        for k in (0, 1):
            swing = damping * p.amplitude * np.sin(omega_t + k * np.pi)
            _slanted_bar(img, xc, xc + direction * swing, y_hip - 1.0, y_hip + leg_len, 2.5, 0.7 + 0.1 * k)
        # torso with horizontal clothing stripes
        y0, y1 = y_torso, y_hip
        rows = _coverage(y0, y1, H)
        cols = _coverage(xc - torso_w / 2, xc + torso_w / 2, W)
        shade = stripes[(np.arange(H) - int(np.floor(y0))) % len(stripes)]
        alpha = np.outer(rows, cols)
        img *= 1.0 - alpha
        img += alpha * np.clip(shade, 0, 1)[:, None]
        _rect(img, xc - head / 2.5, xc + head / 2.5, y_head, y_torso, 0.9)
        if bag:
            bx = xc - direction * (torso_w / 2 + 0.25 * p.body_size)
            _rect(img, bx - 0.25 * p.body_size, bx + 0.25 * p.body_size, y_torso + 0.15 * p.body_size,
                  y_torso + 0.7 * p.body_size, 0.55)
        if spec.noise > 0:
            img += rng.normal(0.0, spec.noise, img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)
    return frames, traj


# ---------------------------------------------------------------------------
# dataset generation


def _scenario_kind(scen):
    return scen[-1]  # N/B/S, also for TN/TB/TS


def generate_synth_dataset(spec, out_dir, fmt="gfsq"):
    """Render every subject/sequence to ``out_dir`` and write ``layout.json``.

    Returns the :class:`~gaitsig.videoio.DatasetLayout`. The layout's
    per-sequence metadata holds the ground truth (gender, direction,
    trajectory, gait parameters).
    """
    spec.validate()
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError("cannot create %s: %s" % (out_dir, exc)) from exc
    if not os.access(out_dir, os.W_OK):
        raise DataError("output directory not writable: %s" % out_dir)
    params = spec.subject_params()
    background = make_background(spec.width, spec.height, spec.seed)
    entries = []
    subjects = {}
    for si, p in enumerate(params):
        sid = "s%03d" % si
        subjects[sid] = {"gender": p.gender, "params": asdict(p)}
        plan = [(scen, seqs, p, 1000 * si) for scen, seqs in spec.sequences.items()]
        if si in spec.elapsed_subjects:
            jrng = np.random.default_rng(spec.seed * 7 + si + 12345)
            jittered = replace(p, freq=p.freq * (1 + jrng.uniform(-ELAPSED_JITTER, ELAPSED_JITTER)),
                               clothing=float(jrng.uniform(0.75, 0.95)))
            subjects[sid]["elapsed_params"] = asdict(jittered)
            plan += [(scen, seqs, jittered, 1000 * si + 500) for scen, seqs in ELAPSED_SEQUENCES.items()]
        for scen, seqs, sp, cloth in plan:
            kind = _scenario_kind(scen)
            for qi, seq in enumerate(seqs):
                direction = 1 if qi % 2 == 0 else -1
                rng = np.random.default_rng([spec.seed, si, hash_str(seq)])
                frames, traj = render_sequence(sp, spec, direction, bag=(kind == "B"),
                                               damping=SHOE_DAMPING if kind == "S" else 1.0,
                                               background=background, rng=rng, cloth_seed=cloth)
                rel = os.path.join(sid, seq + (".gfsq" if fmt == "gfsq" else ""))
                path = os.path.join(out_dir, rel)
                os.makedirs(os.path.dirname(path), exist_ok=True)
                if fmt == "gfsq":
                    write_gfsq(path, frames)
                else:
                    write_frame_dir(path, frames)
                entries.append(SequenceEntry(sid, scen, seq, rel, {
                    "gender": sp.gender, "direction": direction,
                    "trajectory": [round(float(x), 4) for x in traj],
                }))
    layout = DatasetLayout(out_dir, entries, subjects, spec.fps)
    layout.save(os.path.join(out_dir, "layout.json"))
    return layout


def hash_str(s):
    """Stable small integer from a string (``hash()`` is salted per process)."""
    h = 0
    for ch in s.encode():
        h = (h * 131 + ch) % 2_147_483_647
    return h
