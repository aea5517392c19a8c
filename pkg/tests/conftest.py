import numpy as np
import pytest
import torch

from tridp.netblocks import BlockGraph
from tridp.protocol import ProtocolConfig, RunManifest, run_pretraining
from tridp.synthgen import SynthConfig, generate, synthetic_splits

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def default_splits():
    """Default synthetic config: 4 subjects x 60 s."""
    train, test, summary = synthetic_splits(SynthConfig(seed=0))
    return train, test, summary


@pytest.fixture(scope="session")
def small_splits():
    """Two subjects, 45 s each: 28 train and 1 test window per subject."""
    train, test, _ = synthetic_splits(SynthConfig(n_subjects=2, seconds_per_subject=45.0, seed=3))
    return train, test


@pytest.fixture(scope="session")
def default_records():
    return generate(SynthConfig(seed=0))


@pytest.fixture
def tiny_graph():
    return BlockGraph(channel_scale="1/32", disc_scale="1/8")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tiny_config(seed=0, **kw):
    """Two-subject, few-epoch protocol config for fast end-to-end checks."""
    graph = BlockGraph(channel_scale="1/32", disc_scale="1/8", n_subjects=2)
    base = dict(graph=graph, seed=seed, batch_size=8, epochs_ae=2, epochs_disc=10, epochs_base=2, epochs_task=2)
    base.update(kw)
    return ProtocolConfig(**base)


@pytest.fixture(scope="session")
def tiny_pretrained(small_splits):
    train, _ = small_splits
    cfg = make_tiny_config()
    manifest = RunManifest(cfg.seed, cfg.hash())
    return cfg, manifest, run_pretraining(train, cfg, manifest)


ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(number: int, ok: bool, summary: str):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {summary}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
