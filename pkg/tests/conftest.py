"""Shared fixtures: small datasets, seeded generators and IDX files on disk."""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.matrixio import LabeledDataset, write_idx_images, write_idx_labels  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_blobs(n_per_class: int = 50, n_classes: int = 2, dim: int = 2, spread: float = 0.3,
               seed: int = 0) -> LabeledDataset:
    """Well separated Gaussian blobs centred on scaled unit vectors"""
    gen = np.random.default_rng(seed)
    centres = 3.0 * np.eye(max(dim, n_classes))[:n_classes, :dim]
    features = np.vstack([c + spread * gen.standard_normal((n_per_class, dim)) for c in centres])
    labels = np.repeat(np.arange(n_classes), n_per_class)
    order = gen.permutation(labels.size)
    return LabeledDataset(features[order], labels[order], n_classes)


@pytest.fixture
def blobs():
    return make_blobs()


@pytest.fixture
def idx_files(tmp_path):
    """A 60-image 4x4 IDX pair with 3 classes whose mean brightness tracks the label"""
    gen = np.random.default_rng(7)
    labels = np.arange(60) % 3
    images = np.clip(gen.integers(0, 60, size=(60, 16)) + 80 * labels[:, None], 0, 255)
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    write_idx_images(images, 4, 4, images_path)
    write_idx_labels(labels, labels_path)
    return images_path, labels_path
