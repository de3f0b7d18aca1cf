import numpy as np
import pytest

from speechprefix.audio import ConvStackConfig
from speechprefix.config import toy_profile
from speechprefix.data import SynthSpec, select_split, synth_dataset
from speechprefix.params import init_params
from speechprefix.training import prepare_examples
from speechprefix.vocab import build_vocab

from helpers import tiny_conv, tiny_model  # noqa: F401


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    synth_dataset(SynthSpec(n=60, seed=3), out)
    return out


@pytest.fixture(scope="session")
def toy_setup(synth_dir):
    """Toy profile, vocab from the train split and prepared items per split."""
    from speechprefix.data import load_manifest

    examples = load_manifest(synth_dir / "manifest.jsonl")
    vocab = build_vocab([ex.text for ex in select_split(examples, "train")])
    conv = ConvStackConfig.profile("wav2vec2", channels=32)
    cfg = toy_profile(vocab_size=len(vocab))
    params = init_params(cfg, conv, seed=0)
    items = {s: prepare_examples(select_split(examples, s), vocab, params, conv, cfg)
             for s in ("train", "valid", "test")}
    return cfg, conv, params, vocab, items


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
