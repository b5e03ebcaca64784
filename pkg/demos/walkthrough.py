"""From rendered walkers to ranked identities, one step at a time.

Renders three synthetic walkers, computes dense flow and cuboids, trains a
narrow stage-1 network, then enrols and identifies with PCA + nearest
neighbour. Takes a couple of minutes on one core.

    python demos/walkthrough.py [workdir]
"""
import sys
import tempfile

import numpy as np

from gaitsig import classify, gaitnet
from gaitsig.evalcli.pipeline import preprocess_entries
from gaitsig.evalcli.synth import SynthSpec, generate_synth_dataset
from gaitsig.optflow import flow_sequence


def main(workdir):
    layout = generate_synth_dataset(SynthSpec(n_subjects=3, frames=50, seed=0), workdir)
    subjects = sorted(layout.subjects)
    print("rendered %d sequences for %s" % (len(layout.entries), ", ".join(subjects)))

    seq = layout.read(layout.entries[0])
    flows = flow_sequence(seq)
    speed = np.median([np.median(f.u[np.abs(f.u) > 0.5]) for f in flows if np.any(np.abs(f.u) > 0.5)])
    print("%s: %d frames -> %d flow maps, median moving-pixel u %.2f px/frame"
          % (layout.entries[0].path, len(seq), len(flows), speed))

    data = preprocess_entries(layout, layout.entries, {s: i for i, s in enumerate(subjects)})
    # train on the bag and shoe walks, enrol N1-N4, probe with N5 and N6
    enrol = np.isin(data.sequences, ["N1", "N2", "N3", "N4"])
    train = data.subset(np.isin(data.scenarios, ["B", "S"]), augmented=False)
    train.fit_mean()
    print("%d windows; training on %d, enrolling %d" % (data.n_windows, train.n_windows, int(enrol.sum())))

    net = gaitnet.build_stage(1, len(subjects), width_scale=0.125, seed=0)
    sched = gaitnet.TrainSchedule(batch_size=15, lr0=3e-3, max_epochs=20, target_train_accuracy=1.0)
    net, hist = gaitnet.train(net, train, sched)
    print("stage-1 net (%d parameters): training accuracy 100%% after %d epochs"
          % (net.n_params, len(hist.epochs)))

    gallery = data.subset(enrol, augmented=True)
    gallery.mean = train.mean
    probes = data.subset(np.isin(data.sequences, ["N5", "N6"]), augmented=False)
    probes.mean = train.mean
    G = gaitnet.signatures(net, gallery)
    pca = classify.fit_pca(G, 16)  # a 1/8-width stage-1 signature has 32 entries
    g = classify.GallerySet(np.array([classify.pca_project(pca, x) for x in G]), gallery.sample_labels())
    print("gallery: %d signatures of width %d, PCA keeps %.1f%% of the variance"
          % (len(G), G.shape[1], 100 * pca.explained_ratio))

    P = gaitnet.signatures(net, probes)
    subj, seqs = np.asarray(probes.subjects), np.asarray(probes.sequences)
    for seq_name in ("N5", "N6"):
        for label, subject in enumerate(subjects):
            rows = np.flatnonzero((subj == subject) & (seqs == seq_name))
            votes = [classify.nn_rank(g, classify.pca_project(pca, P[i])) for i in rows]
            print("  %s/%s -> %s" % (subject, seq_name, subjects[classify.majority_vote(votes)]))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="gaitsig-demo-"))
