import sys

import numpy as np
import pytest

from dualview.config import HyperParams
from dualview.data import make_batch, prepare_dataset
from dualview.model import ModelParams
from dualview.synth import SyntheticSpec, generate, recommended_vocab_cap
from dualview.text import RawRecord


def micro_hp(**changes) -> HyperParams:
    """d=8 model used by gradient and plumbing tests."""
    base = dict(emb_dim=4, hidden=8, attn_dim=6, query_dim=5, cls_hidden=7, num_classes=3,
                dropout=0.0, batch_size=4, max_decode_depth=8)
    base.update(changes)
    return HyperParams(**base)


def synth_dataset(n=40, num_classes=3, seed=0, valid=4, test=4, hp=None, **spec_kw):
    spec = SyntheticSpec(n_examples=n, num_classes=num_classes, seed=seed, **spec_kw)
    recs = generate(spec)
    hp = hp or micro_hp(num_classes=num_classes)
    hp = hp.replace(vocab_cap=recommended_vocab_cap(spec))
    raws = [RawRecord(r["reviewText"], r["summary"], r["overall"]) for r in recs]
    ds, stats = prepare_dataset(raws, hp, seed=seed, valid_size=valid, test_size=test)
    return ds, hp


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_dataset()


@pytest.fixture
def tiny_model(tiny_dataset):
    ds, hp = tiny_dataset
    params = ModelParams.init(hp, len(ds.vocab), seed=3, scale=0.3)
    return params, hp, ds


@pytest.fixture
def micro_batch(tiny_dataset):
    ds, hp = tiny_dataset
    return make_batch(ds.train[:2])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, sorted by criterion, at the end of the run."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for rec in sorted(results, key=lambda r: r["n"]):
        terminalreporter.write_line(module.format_result(rec))
