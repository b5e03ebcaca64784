import numpy as np
import pytest

from gaitsig.evalcli.pipeline import preprocess_entries
from gaitsig.evalcli.synth import SynthSpec, generate_synth_dataset

TOY_SUBJECTS = 3
TOY_FRAMES = 50  # 49 flow maps -> 5 windows per sequence, 10 sequences -> 50 cuboids per subject


@pytest.fixture(scope="session")
def toy_layout(tmp_path_factory):
    return generate_synth_dataset(SynthSpec(n_subjects=TOY_SUBJECTS, frames=TOY_FRAMES, seed=0),
                                  tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def _toy_base(toy_layout):
    subjects = sorted(toy_layout.subjects)
    return preprocess_entries(toy_layout, toy_layout.entries, {s: i for i, s in enumerate(subjects)})


@pytest.fixture
def toy_set(_toy_base):
    """Fresh 150-cuboid, 3-identity set with its mean fitted (unaugmented)."""
    ds = _toy_base.subset(np.ones(_toy_base.n_windows, dtype=bool), augmented=False)
    ds.fit_mean()
    return ds


MINI_WIDTH = 0.125


@pytest.fixture(scope="session")
def mini_layout(tmp_path_factory):
    """Five walkers, one window per sequence; s000/s001 also have elapsed-time sequences."""
    spec = SynthSpec(n_subjects=5, frames=30, seed=1, elapsed_subjects=[0, 1])
    return generate_synth_dataset(spec, tmp_path_factory.mktemp("mini"))


@pytest.fixture(scope="session")
def mini_cache():
    return {}


def mini_config(layout, out, **kw):
    from gaitsig.evalcli.experiment import ExperimentConfig

    base = dict(dataset=str(layout.root), test_subjects=["s000", "s001"], train_subjects=["s002", "s003"],
                val_subjects=["s004"], width_scale=MINI_WIDTH, augment_train=False,
                schedules=[dict(batch_size=16, max_epochs=1)], finetune=dict(batch_size=36, max_epochs=5),
                pca_dim=64, seed=3, out=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
