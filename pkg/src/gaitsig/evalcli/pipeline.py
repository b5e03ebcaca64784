"""Dataset-to-cuboid preprocessing shared by the experiment runner and the CLI."""

import logging

import numpy as np

from ..cuboid import SUBSEQ_LEN, CuboidSet, plan_windows, stack_flows
from ..errors import DataError
from ..optflow import FlowParams, flow_sequence
from ..videoio import WORK_HEIGHT, WORK_WIDTH, localize_subject, resize_sequence

log = logging.getLogger(__name__)


def sequence_windows(seq, flow_params=None):
    """Uncropped flow windows ``(n, H, W, 2L)`` plus crop origins and start frames for one sequence."""
    seq = resize_sequence(seq, WORK_WIDTH, WORK_HEIGHT)
    track = localize_subject(seq)
    flows = flow_sequence(seq, flow_params)
    plan = plan_windows(flows, track)
    if not plan:
        return np.zeros((0, seq.height, seq.width, 2 * SUBSEQ_LEN), np.float32), [], []
    stacked = stack_flows(flows)
    windows = np.stack([stacked[:, :, 2 * s:2 * (s + SUBSEQ_LEN)] for s, _, _ in plan])
    return windows, [cx for _, cx, _ in plan], [s for s, _, _ in plan]


def preprocess_entries(layout, entries, label_of=None, flow_params=None, cache=None):
    """Stream the listed sequences through resize, tracking, flow and windowing.

    ``label_of`` maps a subject id to an integer label (``-1`` when absent).
    ``cache`` is an optional dict keyed by sequence path, reused across calls.
    """
    flow_params = flow_params or FlowParams()
    label_of = label_of or {}
    wins, cxs, labels, scens, subs, seqs, starts = [], [], [], [], [], [], []
    for e in entries:
        key = (e.path, flow_params)
        if cache is not None and key in cache:
            w, cx, st = cache[key]
        else:
            w, cx, st = sequence_windows(layout.read(e), flow_params)
            if cache is not None:
                cache[key] = (w, cx, st)
        if len(cx) == 0:
            log.warning("no usable window in %s", e.path)
            continue
        wins.append(w)
        cxs += cx
        starts += st
        n = len(cx)
        labels += [label_of.get(e.subject, -1)] * n
        scens += [e.scenario] * n
        subs += [e.subject] * n
        seqs += [e.sequence] * n
    if not wins:
        raise DataError("no subsequences could be built from %d sequences" % len(entries))
    return CuboidSet(np.concatenate(wins), cxs, labels, scens, subs, seqs, starts)
