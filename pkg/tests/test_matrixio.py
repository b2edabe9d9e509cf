#!/usr/bin/env python3
"""
Tests for matrix, IDX and checkpoint files
"""

import struct

import numpy as np
import pytest

from src.errors import DataError, DegenerateInputError, DimensionError, FormatError, TruncationError
from src.matrixio import (LabeledDataset, ModelCheckpoint, decode_matrix, encode_matrix, load_checkpoint,
                          load_idx_dataset, normalize_dataset, read_idx, read_matrix, read_matrix_csv,
                          save_checkpoint, write_matrix, write_matrix_csv)


class TestPmat:
    def test_round_trip_small(self, tmp_path):
        m = np.arange(6, dtype=float).reshape(2, 3) / 7.0
        write_matrix(m, tmp_path / "m.pmat")
        back = read_matrix(tmp_path / "m.pmat")
        assert back.shape == (2, 3)
        assert np.array_equal(back, m)

    def test_header_layout(self):
        raw = encode_matrix(np.ones((2, 3)))
        assert raw[:8] == b"PMAT0001"
        assert struct.unpack("<QQ", raw[8:24]) == (2, 3)
        assert len(raw) == 24 + 6 * 8

    def test_repeated_writes_are_byte_identical(self, tmp_path, rng):
        m = rng.standard_normal((300, 200))
        write_matrix(m, tmp_path / "a.pmat")
        write_matrix(m, tmp_path / "b.pmat")
        assert (tmp_path / "a.pmat").read_bytes() == (tmp_path / "b.pmat").read_bytes()

    def test_bad_magic(self):
        raw = b"PMAT9999" + encode_matrix(np.ones((1, 1)))[8:]
        with pytest.raises(FormatError):
            decode_matrix(raw)

    def test_truncated_payload(self):
        raw = encode_matrix(np.ones((2, 2)))
        with pytest.raises(TruncationError):
            decode_matrix(raw[:-8])

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            encode_matrix(np.array([[1.0, np.nan]]))

    def test_csv_round_trip(self, tmp_path, rng):
        m = rng.standard_normal((4, 5))
        write_matrix_csv(m, tmp_path / "m.csv")
        assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), m)


class TestIdx:
    def test_labels_decode(self, tmp_path):
        path = tmp_path / "labels"
        path.write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 4, 9]))
        assert read_idx(path).tolist() == [0, 4, 9]

    def test_image_scaling(self, tmp_path):
        path = tmp_path / "images"
        path.write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([0, 255, 128, 64]))
        images = read_idx(path)
        assert images.shape == (1, 4)
        assert np.allclose(images[0], [0.0, 1.0, 128 / 255, 64 / 255])

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(struct.pack(">II", 0x999, 0))
        with pytest.raises(FormatError):
            read_idx(path)

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "images"
        path.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(4))
        with pytest.raises(TruncationError):
            read_idx(path)

    def test_dataset_pairing(self, idx_files):
        data = load_idx_dataset(*idx_files, n_classes=3)
        assert data.n_samples == 60
        assert data.n_features == 16
        assert data.features.max() <= 1.0
        assert load_idx_dataset(*idx_files, n_classes=3, limit=10).n_samples == 10


class TestNormalize:
    def test_scales_to_target(self):
        d = LabeledDataset(np.array([[3.0, 4.0], [0.0, 1.0]]), np.array([0, 1]), 2)
        out = normalize_dataset(d, 0.1)
        assert np.allclose(out.features, [[0.06, 0.08], [0.0, 0.02]])
        assert abs(np.linalg.norm(out.features, axis=1).max() - 0.1) < 1e-12

    def test_identity_when_already_at_target(self):
        d = LabeledDataset(np.array([[3.0, 4.0], [0.0, 1.0]]), np.array([0, 1]), 2)
        assert np.array_equal(normalize_dataset(d, 5.0).features, d.features)

    def test_all_zero_rejected(self):
        d = LabeledDataset(np.zeros((3, 2)), np.zeros(3, dtype=int), 1)
        with pytest.raises(DegenerateInputError):
            normalize_dataset(d, 1.0)

    def test_bad_labels_rejected(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 2)), np.array([0, 5]), 3)


class TestCheckpoint:
    def _ckpt(self, rng, split=False, mask_shape=None):
        layers = []
        masks = {}
        if split:
            layers += [("layer0.left", rng.standard_normal((16, 4))), ("layer0.right", rng.standard_normal((4, 16)))]
        else:
            layers.append(("layer0.weight", rng.standard_normal((16, 16))))
            if mask_shape:
                masks["layer0.weight"] = np.ones(mask_shape)
        layers += [("layer1.weight", rng.standard_normal((10, 16))), ("layer1.bias", rng.standard_normal((1, 10)))]
        return ModelCheckpoint(topology=[16, 16, 10], activation="abs", activation_on_final=False,
                               layers=layers, masks=masks, split_flags=[split, False])

    def test_round_trip(self, tmp_path, rng):
        ckpt = self._ckpt(rng, mask_shape=(16, 16))
        save_checkpoint(ckpt, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.topology == [16, 16, 10]
        assert back.activation == "abs"
        for (name, m), (name2, m2) in zip(ckpt.layers, back.layers):
            assert name == name2
            assert np.array_equal(m, m2)
        assert np.array_equal(back.masks["layer0.weight"], ckpt.masks["layer0.weight"])

    def test_split_flag_round_trips(self, tmp_path, rng):
        save_checkpoint(self._ckpt(rng, split=True), tmp_path / "s.ckpt")
        back = load_checkpoint(tmp_path / "s.ckpt")
        assert back.split_flags == [True, False]
        assert back.named()["layer0.left"].shape == (16, 4)

    def test_wrong_mask_shape_rejected_on_save(self, tmp_path, rng):
        with pytest.raises(DimensionError):
            save_checkpoint(self._ckpt(rng, mask_shape=(16, 15)), tmp_path / "bad.ckpt")

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._ckpt(rng), path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            load_checkpoint(path)
