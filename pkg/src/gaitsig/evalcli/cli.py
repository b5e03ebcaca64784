"""``gaitsig`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import classify, gaitnet
from ..cuboid import CuboidSet, read_archive, write_archive
from ..errors import ConfigError, DataError, NumericalError, ShapeError
from ..nnet import gradcheck_suite, load_checkpoint, save_checkpoint
from ..videoio import DatasetLayout
from .experiment import ExperimentConfig, run_experiment
from .pipeline import preprocess_entries
from .synth import SynthSpec, generate_synth_dataset

log = logging.getLogger("gaitsig")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
GLOBAL_DEFAULTS = {"config": None, "seed": None, "threads": None, "out": None, "verbose": False}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _csv(s):
    return [x for x in s.split(",") if x] if s else None


def _config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    return cfg


def _out(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _archive_set(path, mean=None):
    cubs = read_archive(path)
    ds = CuboidSet.from_cuboids(cubs, mean=mean)
    if np.any(ds.labels < 0):
        raise DataError("archive %s contains unlabeled cuboids" % path)
    return ds


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    spec = SynthSpec(n_subjects=args.subjects, frames=args.frames, seed=args.seed or 0,
                     elapsed_subjects=list(range(args.elapsed)), noise=args.noise)
    lay = generate_synth_dataset(spec, _out(args, "synth"), fmt=args.format)
    print("wrote %d sequences for %d subjects to %s" % (len(lay.entries), len(lay.subjects), lay.root))


def cmd_preprocess(args):
    lay = DatasetLayout.load(args.dataset)
    entries = lay.select(_csv(args.subjects), _csv(args.scenarios), _csv(args.sequences))
    if not entries:
        raise DataError("selection matched no sequences")
    subjects = sorted({e.subject for e in entries})
    label_of = {s: i for i, s in enumerate(subjects)}
    ds = preprocess_entries(lay, entries, label_of)
    out = os.path.join(_out(args), "cuboids.gfcb")
    write_archive(out, ds.iter_cuboids(), {"subjects": subjects, "dataset": os.path.abspath(lay.root)})
    print("wrote %d cuboids from %d sequences to %s" % (ds.n_windows, len(entries), out))


def cmd_train(args):
    cfg = _config(args)
    ds = _archive_set(args.archive)
    ds.augmented = cfg.augment_train
    mean = ds.fit_mean().mean
    val = _archive_set(args.val_archive, mean) if args.val_archive else None
    with open(args.archive + ".json") as fh:
        subjects = json.load(fh).get("subjects", [])
    n_classes = int(ds.labels.max()) + 1
    net, hists = gaitnet.run_curriculum(ds, val, cfg.stage_schedules(), n_classes, cfg.width_scale, cfg.seed,
                                        init=cfg.init)
    out = _out(args)
    save_checkpoint(os.path.join(out, "network.gfnn"), net,
                    extra={"mean": mean, "subjects": subjects, "width_scale": cfg.width_scale, "seed": cfg.seed})
    for k, h in enumerate(hists, 1):
        h.to_csv(os.path.join(out, "history_stage%d.csv" % k))
    print("trained %d-class network (%d parameters) -> %s" % (n_classes, net.n_params, out))


def cmd_finetune(args):
    cfg = _config(args)
    net, _, extra = load_checkpoint(args.checkpoint)
    ds = _archive_set(args.archive, extra.get("mean"))
    ds.augmented = cfg.augment_gallery
    n_classes = int(ds.labels.max()) + 1
    tuned, hist = gaitnet.finetune_softmax(net, ds, cfg.finetune_schedule(), n_classes)
    out = _out(args)
    save_checkpoint(os.path.join(out, "finetuned.gfnn"), tuned, extra=extra)
    hist.to_csv(os.path.join(out, "history_finetune.csv"))
    print("fine-tuned softmax to %d classes -> %s" % (n_classes, out))


def cmd_extract(args):
    net, _, extra = load_checkpoint(args.checkpoint)
    if "mean" not in extra:
        raise DataError("checkpoint lacks the training-set mean")
    ds = _archive_set(args.archive, extra["mean"])
    ds.augmented = args.augment
    sig = gaitnet.signatures(net.eval(), ds)
    out = os.path.join(_out(args), "signatures.gfgl")
    classify.save_gallery(out, classify.GallerySet(sig, ds.sample_labels()))
    rows = ds.base_index(np.arange(len(ds)))
    with open(out + ".json", "w") as fh:
        json.dump({k: [getattr(ds, k)[i] for i in rows] for k in ("subjects", "scenarios", "sequences")}, fh)
    print("wrote %d signatures of dimension %d to %s" % (sig.shape + (out,)))


def cmd_fit_classifier(args):
    table = classify.load_gallery(args.signatures)
    out = _out(args)
    cfg = _config(args)
    if args.kind == "svm":
        ens = classify.train_ovr_svm(table.vectors, table.labels, cfg.svm_lambda, cfg.svm_epochs, cfg.seed)
        classify.save_svm(os.path.join(out, "identity.gfsv"), ens)
    elif args.kind == "pca-nn":
        pca = classify.fit_pca(table.vectors, args.pca_dim)
        classify.save_pca(os.path.join(out, "pca.gfpc"), pca)
        classify.save_gallery(os.path.join(out, "gallery.gfgl"),
                              classify.GallerySet(classify.pca_project(pca, table.vectors), table.labels))
    else:
        if not args.dataset:
            raise ConfigError("fit-classifier gender needs --dataset for the gender tags")
        lay = DatasetLayout.load(args.dataset)
        with open(args.signatures + ".json") as fh:
            subjects = json.load(fh)["subjects"]
        genders = [lay.subjects.get(s, {}).get("gender") for s in subjects]
        if any(g not in ("F", "M") for g in genders):
            raise DataError("signature rows without a gender tag")
        ens = classify.train_gender_svm(table.vectors, np.array(genders), cfg.svm_lambda, cfg.svm_epochs, cfg.seed)
        classify.save_svm(os.path.join(out, "gender.gfsv"), ens)
    print("fitted %s classifier -> %s" % (args.kind, out))


def cmd_evaluate(args):
    cfg = _config(args)
    if args.protocol:
        cfg.protocol = args.protocol
    if args.classifier:
        cfg.classifier = args.classifier
    report = run_experiment(cfg)
    sys.stdout.write(report.to_text())


def cmd_gradcheck(args):
    results = gradcheck_suite(args.networks, args.eps, args.seed or 0)
    bad = [r.reason for r in results if not r.valid]
    if bad:
        raise NumericalError("gradient check could not run: %s" % bad[0])
    worst = max(r.max_rel_error for r in results)
    ok = worst < args.tolerance
    print("%d networks, max relative error %.3e (%s)" % (args.networks, worst, "ok" if ok else "FAIL"))
    if not ok:
        raise NumericalError("gradient check exceeded tolerance %.1e" % args.tolerance)


# ---------------------------------------------------------------------------


def build_parser():
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gaitsig", description="Gait signatures from optical-flow cuboids.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="render a synthetic walker dataset")
    s.add_argument("--subjects", type=int, default=8)
    s.add_argument("--frames", type=int, default=45)
    s.add_argument("--elapsed", type=int, default=0, help="render TN/TB/TS for the first N subjects")
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--format", choices=("gfsq", "png"), default="gfsq")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", parents=[common], help="dataset -> cuboid archive")
    s.add_argument("--dataset", required=True)
    s.add_argument("--subjects", help="comma-separated subject ids")
    s.add_argument("--scenarios", help="comma-separated scenario codes")
    s.add_argument("--sequences", help="comma-separated sequence names")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="curriculum training on a cuboid archive")
    s.add_argument("--archive", required=True)
    s.add_argument("--val-archive")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", parents=[common], help="re-fit the softmax layer on new identities")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--archive", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("extract", parents=[common], help="signatures for every cuboid of an archive")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--archive", required=True)
    s.add_argument("--augment", action="store_true", help="also extract the 18 shifted/mirrored variants")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit-classifier", parents=[common], help="SVM, PCA+NN gallery or gender SVM")
    s.add_argument("kind", choices=("svm", "pca-nn", "gender"))
    s.add_argument("--signatures", required=True)
    s.add_argument("--pca-dim", type=int, default=128, choices=(64, 128, 256))
    s.add_argument("--dataset", help="layout with gender tags (gender only)")
    s.set_defaults(func=cmd_fit_classifier)

    s = sub.add_parser("evaluate", parents=[common], help="run protocol A, B or C")
    s.add_argument("--protocol", choices=("A", "B", "C"))
    s.add_argument("--classifier", choices=("SM", "SVM", "NN"))
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the layer library")
    s.add_argument("--networks", type=int, default=100)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("gaitsig: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except ConfigError as exc:
        print("gaitsig: configuration error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print("gaitsig: numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ShapeError, OSError) as exc:
        print("gaitsig: data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
