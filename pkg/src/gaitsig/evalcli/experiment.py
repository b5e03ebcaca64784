"""Identification (A), elapsed-time (B) and gender (C) protocols.

A run goes: preprocess -> train or load the network -> adapt to the test
subjects (softmax fine-tune, SVM or PCA+NN) -> per-subsequence rankings ->
per-video majority vote -> metrics. The report written to disk contains
no wall-clock data, so identical configs give identical bytes; timings
go to a separate ``timing.json``.
"""

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import classify, gaitnet
from ..cuboid import CuboidSet
from ..errors import ConfigError, DataError
from ..nnet import load_checkpoint, save_checkpoint
from ..optflow import FlowParams
from ..videoio import DatasetLayout
from .metrics import confusion_matrix, rank_k_accuracy
from .pipeline import preprocess_entries

log = logging.getLogger(__name__)

PROTOCOLS = ("A", "B", "C")
CLASSIFIERS = ("SM", "SVM", "NN")
PCA_DIMS = (64, 128, 256)
GENDERS = ("F", "M")


def _default_schedule():
    return dict(gaitnet.TrainSchedule().__dict__)


@dataclass
class ExperimentConfig:
    protocol: str = "A"
    dataset: str = ""
    train_subjects: list = field(default_factory=list)
    val_subjects: list = field(default_factory=list)
    test_subjects: list = field(default_factory=list)
    rep_scenarios: list = field(default_factory=lambda: ["N", "B", "S"])
    val_sequences: list = field(default_factory=lambda: ["N6", "B2", "S2"])  # held out of val subjects
    finetune_sequences: list = None  # default N1-N4 (A, C) or TN1-TN4 (B)
    probe_scenarios: list = None  # default N, B, S (A, C) or TN, TB, TS (B)
    classifier: str = "SVM"
    pca_dim: int = 128
    width_scale: float = 1.0
    init: str = "he"
    augment_train: bool = True
    augment_gallery: bool = True
    schedules: list = None  # four TrainSchedule dicts, or one applied to every stage
    finetune: dict = None
    svm_lambda: float = 1e-4
    svm_epochs: int = 60
    seed: int = 0
    checkpoint: str = None
    train_network: bool = True
    out: str = None
    flow: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("unknown config keys: %s" % sorted(unknown))
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError("config file not found: %s" % path) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config %s is not valid JSON: %s" % (path, exc)) from exc

    def to_dict(self):
        return asdict(self)

    # -- derived settings -------------------------------------------------

    @property
    def rep_subjects(self):
        return sorted(set(self.train_subjects) | set(self.val_subjects))

    def gallery_sequences(self):
        if self.finetune_sequences is not None:
            return list(self.finetune_sequences)
        prefix = "TN" if self.protocol == "B" else "N"
        return ["%s%d" % (prefix, i) for i in range(1, 5)]

    def probes(self):
        if self.probe_scenarios is not None:
            return list(self.probe_scenarios)
        return ["TN", "TB", "TS"] if self.protocol == "B" else ["N", "B", "S"]

    def stage_schedules(self):
        s = self.schedules if self.schedules is not None else [_default_schedule()]
        if isinstance(s, dict):
            s = [s]
        if len(s) == 1:
            s = s * 4
        if len(s) != 4:
            raise ConfigError("schedules must list 1 or 4 entries, got %d" % len(s))
        return [gaitnet.TrainSchedule(**{**x, "seed": x.get("seed", 0) + self.seed + 13 * k})
                for k, x in enumerate(s)]

    def finetune_schedule(self):
        d = dict(self.finetune or {})
        d["seed"] = d.get("seed", 0) + self.seed
        return gaitnet.TrainSchedule(**d)

    def checkpoint_path(self):
        if self.checkpoint:
            return self.checkpoint
        if self.out:
            return os.path.join(self.out, "network.gfnn")
        return None

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol must be one of %s" % (PROTOCOLS,))
        if self.classifier not in CLASSIFIERS:
            raise ConfigError("classifier must be one of %s" % (CLASSIFIERS,))
        if self.classifier == "NN" and self.pca_dim not in PCA_DIMS:
            raise ConfigError("pca_dim must be one of %s" % (PCA_DIMS,))
        parts = {"train": set(self.train_subjects), "val": set(self.val_subjects), "test": set(self.test_subjects)}
        for a in parts:
            for b in parts:
                if a < b and parts[a] & parts[b]:
                    raise ConfigError("subject partitions %s and %s overlap: %s"
                                      % (a, b, sorted(parts[a] & parts[b])))
        if not self.probes():
            raise ConfigError("probe scenario list is empty")
        if not self.test_subjects:
            raise ConfigError("no test subjects")
        if self.train_network and not self.rep_subjects:
            raise ConfigError("training requested but the train/val partitions are empty")
        if self.protocol == "C" and not self.rep_subjects:
            raise ConfigError("protocol C trains the gender SVM on the train/val partitions, which are empty")
        if not self.train_network:
            path = self.checkpoint_path()
            if not path or not os.path.exists(path):
                raise ConfigError("evaluation-only run but checkpoint %r does not exist" % path)
        self.stage_schedules()
        self.finetune_schedule()
        FlowParams(**self.flow)

    def digest(self):
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# report


def _r(x):
    return None if x is None else round(float(x), 6)


@dataclass
class EvalReport:
    protocol: str
    classifier: str
    seed: int
    config_digest: str
    scenarios: dict
    average: dict
    videos: list
    confusion: dict = None
    runtime: dict = field(default_factory=dict)

    def check(self):
        for name, row in self.scenarios.items():
            for key in ("rank1", "rank5", "accuracy"):
                v = row.get(key)
                if v is not None and not 0.0 <= v <= 100.0:
                    raise AssertionError("%s %s = %r outside [0, 100]" % (name, key, v))
            if row.get("rank1") is not None and row["rank5"] < row["rank1"]:
                raise AssertionError("%s: rank-5 below rank-1" % name)
        for name, cm in (self.confusion or {}).items():
            counts = np.asarray(cm["counts"])
            if counts.sum() != self.scenarios.get(name, {}).get("videos", counts.sum()):
                raise AssertionError("%s: confusion rows do not add up to the video count" % name)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_text(self):
        names = list(self.scenarios)
        lines = ["protocol %s  classifier %s  seed %d" % (self.protocol, self.classifier, self.seed)]
        if self.protocol in ("A", "B"):
            head = "%-8s" % "" + "".join("%8s" % n for n in names) + "%8s" % "Avg"
            lines += [head, "-" * len(head)]
            for key, title in (("rank1", "rank-1"), ("rank5", "rank-5")):
                lines.append("%-8s" % title + "".join("%8.1f" % self.scenarios[n][key] for n in names)
                             + "%8.1f" % self.average[key])
        else:
            for n in names:
                cm = self.confusion[n]
                lines.append("%s  (accuracy %.1f%%)" % (n, cm["accuracy"]))
                lines.append("%8s" % "" + "".join("%8s" % c for c in cm["classes"]))
                for c, row in zip(cm["classes"], cm["row_percentages"]):
                    lines.append("%8s" % c + "".join("%8.1f" % v for v in row))
            lines.append("average accuracy %.1f%%" % self.average["accuracy"])
        return "\n".join(lines) + "\n"

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(self.to_text())


# ---------------------------------------------------------------------------
# stages


def _video_groups(ds):
    groups = {}
    for i, key in enumerate(zip(ds.subjects, ds.scenarios, ds.sequences)):
        groups.setdefault(key, []).append(i)
    return groups


def train_representation(cfg, layout, cache=None):
    """Curriculum-train on train/val subjects; returns ``(net, mean, class_subjects, histories)``."""
    subjects = cfg.rep_subjects
    label_of = {s: i for i, s in enumerate(subjects)}
    fp = FlowParams(**cfg.flow)
    entries = layout.select(subjects=subjects, scenarios=cfg.rep_scenarios)
    held = [e for e in entries if e.subject in cfg.val_subjects and e.sequence in cfg.val_sequences]
    used = [e for e in entries if e not in held]
    train_ds = preprocess_entries(layout, used, label_of, fp, cache)
    test = set(cfg.test_subjects)
    leaked = sorted(set(train_ds.subjects) & test)
    if leaked:
        raise AssertionError("test subjects in representation training: %s" % leaked)
    train_ds.augmented = cfg.augment_train
    stats = train_ds.fit_mean()
    val_ds = None
    if held:
        val_ds = preprocess_entries(layout, held, label_of, fp, cache)
        val_ds.mean = stats.mean
    net, hists = gaitnet.run_curriculum(train_ds, val_ds, cfg.stage_schedules(), len(subjects),
                                        cfg.width_scale, cfg.seed, init=cfg.init)
    return net, stats.mean, subjects, hists


def load_representation(path):
    net, _, extra = load_checkpoint(path)
    if "mean" not in extra:
        raise DataError("checkpoint %s lacks the training-set mean" % path)
    return net, float(extra["mean"]), list(extra.get("subjects", []))


def _rankings(cfg, net, gallery, probe, classes):
    """Per-subsequence :class:`RankedPrediction` list for the probe set."""
    if cfg.classifier == "SM":
        tuned, _ = gaitnet.finetune_softmax(net, gallery, cfg.finetune_schedule(), len(classes))
        prob = gaitnet.predict_scores(tuned, probe)
        return [classify.rank_scores(np.arange(len(classes)), p) for p in prob], {"finetune_samples": len(gallery)}
    g_sig = gaitnet.signatures(net, gallery)
    p_sig = gaitnet.signatures(net, probe)
    labels = gallery.sample_labels()
    if cfg.classifier == "SVM":
        ens = classify.train_ovr_svm(g_sig, labels, cfg.svm_lambda, cfg.svm_epochs, cfg.seed)
        if cfg.out:
            classify.save_svm(os.path.join(cfg.out, "identity.gfsv"), ens)
        return [classify.svm_rank(ens, s) for s in p_sig], {"gallery_samples": len(gallery)}
    pca = classify.fit_pca(g_sig, cfg.pca_dim)
    g = classify.GallerySet(classify.pca_project(pca, g_sig), labels)
    if cfg.out:
        classify.save_pca(os.path.join(cfg.out, "pca.gfpc"), pca)
        classify.save_gallery(os.path.join(cfg.out, "gallery.gfgl"), g)
    return [classify.nn_rank(g, z) for z in classify.pca_project(pca, p_sig)], {
        "gallery_samples": len(gallery), "pca_explained": _r(pca.explained_ratio)}


def _identification(cfg, layout, net, mean, cache):
    test = sorted(cfg.test_subjects)
    label_of = {s: i for i, s in enumerate(test)}
    fp = FlowParams(**cfg.flow)
    gal_entries = layout.select(subjects=test, sequences=cfg.gallery_sequences())
    missing = sorted(set(test) - {e.subject for e in gal_entries})
    if missing:
        raise DataError("test subjects without gallery sequences: %s" % missing)
    gallery_seq = set(cfg.gallery_sequences())
    probe_entries = [e for e in layout.select(subjects=test, scenarios=cfg.probes()) if e.sequence not in gallery_seq]
    if not probe_entries:
        raise DataError("no probe sequences for scenarios %s" % cfg.probes())
    gallery = preprocess_entries(layout, gal_entries, label_of, fp, cache)
    gallery.augmented = cfg.augment_gallery
    gallery.mean = mean
    probe = preprocess_entries(layout, probe_entries, label_of, fp, cache)
    probe.mean = mean
    preds, info = _rankings(cfg, net, gallery, probe, test)
    names = np.array(test)
    videos = []
    per_scen = {}
    for (subj, scen, seq), idx in _video_groups(probe).items():
        sub = [preds[i] for i in idx]
        ranked = classify.video_ranking(sub)
        truth = label_of[subj]
        videos.append({
            "subject": subj, "scenario": scen, "sequence": seq, "subsequences": len(idx),
            "predicted": str(names[ranked.top]), "top5": [str(names[c]) for c in ranked.labels[:5]],
            "correct": bool(ranked.top == truth),
            "subsequence_top1": [str(names[p.top]) for p in sub],
        })
        per_scen.setdefault(scen, ([], [], []))
        per_scen[scen][0].append(ranked)
        per_scen[scen][1].append(truth)
        per_scen[scen][2].extend((p, truth) for p in sub)
    scenarios = {}
    for scen in [s for s in cfg.probes() if s in per_scen]:
        vp, vt, sp = per_scen[scen]
        scenarios[scen] = {
            "videos": len(vp),
            "rank1": _r(rank_k_accuracy(vp, vt, 1)),
            "rank5": _r(rank_k_accuracy(vp, vt, 5)),
            "subsequences": len(sp),
            "subsequence_rank1": _r(rank_k_accuracy([p for p, _ in sp], [t for _, t in sp], 1)),
        }
    average = {k: _r(np.mean([row[k] for row in scenarios.values()])) for k in ("rank1", "rank5")}
    info.update(probe_subsequences=len(probe))
    return scenarios, average, videos, None, info


def _gender(cfg, layout, net, mean, cache):
    fp = FlowParams(**cfg.flow)

    def gender(s):
        g = layout.subjects.get(s, {}).get("gender")
        if g not in GENDERS:
            raise DataError("subject %s has no gender tag" % s)
        return g

    rep = layout.select(subjects=cfg.rep_subjects, scenarios=cfg.rep_scenarios)
    train_ds = preprocess_entries(layout, rep, {s: GENDERS.index(gender(s)) for s in cfg.rep_subjects}, fp, cache)
    train_ds.mean = mean
    gallery_seq = set(cfg.gallery_sequences())
    test = sorted(cfg.test_subjects)
    probe_entries = [e for e in layout.select(subjects=test, scenarios=cfg.probes()) if e.sequence not in gallery_seq]
    if not probe_entries:
        raise DataError("no probe sequences for scenarios %s" % cfg.probes())
    probe = preprocess_entries(layout, probe_entries, {s: GENDERS.index(gender(s)) for s in test}, fp, cache)
    probe.mean = mean
    ens = classify.train_gender_svm(gaitnet.signatures(net, train_ds), np.array(GENDERS)[train_ds.labels],
                                    cfg.svm_lambda, cfg.svm_epochs, cfg.seed)
    if cfg.out:
        classify.save_svm(os.path.join(cfg.out, "gender.gfsv"), ens)
    preds = [classify.svm_rank(ens, s) for s in gaitnet.signatures(net, probe)]
    videos, by_scen = [], {}
    for (subj, scen, seq), idx in _video_groups(probe).items():
        winner = classify.majority_vote([preds[i] for i in idx])
        truth = gender(subj)
        videos.append({"subject": subj, "scenario": scen, "sequence": seq, "subsequences": len(idx),
                       "predicted": str(winner), "truth": truth, "correct": bool(winner == truth)})
        by_scen.setdefault(scen, ([], []))
        by_scen[scen][0].append(str(winner))
        by_scen[scen][1].append(truth)
    confusion, scenarios = {}, {}
    for scen in [s for s in cfg.probes() if s in by_scen]:
        cm = confusion_matrix(by_scen[scen][0], by_scen[scen][1], GENDERS)
        confusion[scen] = cm.to_dict()
        scenarios[scen] = {"videos": cm.total, "accuracy": _r(cm.accuracy)}
    average = {"accuracy": _r(np.mean([row["accuracy"] for row in scenarios.values()]))}
    return scenarios, average, videos, confusion, {"gender_train_samples": len(train_ds),
                                                   "probe_subsequences": len(probe)}


def run_experiment(cfg, layout=None, cache=None):
    """Run one protocol end to end and return its :class:`EvalReport`.

    Configuration problems (overlapping partitions, missing checkpoint in
    evaluation-only mode) are raised before any data is touched.
    """
    cfg.validate()
    t0 = time.perf_counter()
    layout = layout or DatasetLayout.load(cfg.dataset)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
    cache = {} if cache is None else cache
    timing = {}
    if cfg.train_network:
        net, mean, subjects, hists = train_representation(cfg, layout, cache)
        path = cfg.checkpoint_path()
        if path:
            save_checkpoint(path, net, extra={"mean": mean, "subjects": subjects, "width_scale": cfg.width_scale,
                                              "seed": cfg.seed})
        if cfg.out:
            for k, h in enumerate(hists, 1):
                h.to_csv(os.path.join(cfg.out, "history_stage%d.csv" % k))
        trained = {"stage_epochs": [len(h.epochs) for h in hists],
                   "min_passes": [getattr(h, "min_passes", None) for h in hists]}
    else:
        net, mean, subjects = load_representation(cfg.checkpoint_path())
        trained = {"loaded": os.path.basename(cfg.checkpoint_path())}
    timing["representation_s"] = time.perf_counter() - t0
    net.eval()
    run = _gender if cfg.protocol == "C" else _identification
    scenarios, average, videos, confusion, info = run(cfg, layout, net, mean, cache)
    timing["total_s"] = time.perf_counter() - t0
    info.update(trained)
    info.update(representation_subjects=len(subjects), network_params=net.n_params, mean=_r(mean))
    report = EvalReport(cfg.protocol, cfg.classifier if cfg.protocol != "C" else "SVM", cfg.seed, cfg.digest(),
                        scenarios, average, videos, confusion, info)
    report.check()
    if cfg.out:
        report.save(cfg.out)
        with open(os.path.join(cfg.out, "timing.json"), "w") as fh:
            json.dump({k: round(v, 3) for k, v in timing.items()}, fh, indent=1)
    return report
