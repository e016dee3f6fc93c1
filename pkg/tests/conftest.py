"""Shared fixtures: one small generated dataset reused by trainer/CLI tests."""

import pytest

from triseg import data as D


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    spec = D.DatasetSpec(train_images=6, val_images=3, test_images=2, size=32, num_classes=4, seed=7)
    D.generate(spec, root)
    return root
