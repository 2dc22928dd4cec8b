"""Shared fixtures: a small procedural corpus reused across test modules."""

import pytest

from twintune import data


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """A 4-class 32x32 corpus: 48 train / 32 test images plus manifest."""
    root = tmp_path_factory.mktemp("micro_corpus")
    manifest = data.synth_generate(
        root, num_classes=4, n_train=48, n_test=32, image_size=32, seed=11
    )
    return data.load_manifest(manifest)


@pytest.fixture(scope="session")
def micro_manifest(tmp_path_factory):
    """Manifest path for a second tiny corpus, for CLI-level tests."""
    root = tmp_path_factory.mktemp("cli_corpus")
    return data.synth_generate(
        root, num_classes=4, n_train=48, n_test=32, image_size=32, seed=23
    )
