import gzip
import io
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from gplab.data import (ImageSource, SyntheticSpec, load_idx, load_mnist, make_batch, normalize,
                        write_idx)
from gplab.errors import DomainError, ExhaustionError, FormatError, LengthMismatchError, \
    MissingDataError, UnsupportedTypeError
from gplab.numerics import Rng


def test_idx_minimal_label_file():
    out = load_idx(bytes([0, 0, 8, 1, 0, 0, 0, 2, 5, 9]))
    assert out.shape == (2,) and out.tolist() == [5, 9]


def test_idx_minimal_image_file():
    raw = bytes([0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4])
    assert load_idx(raw).tolist() == [[[1, 2], [3, 4]]]


def test_idx_gzip_and_file_object(tmp_path):
    raw = bytes([0, 0, 8, 1, 0, 0, 0, 3, 7, 8, 9])
    assert load_idx(gzip.compress(raw)).tolist() == [7, 8, 9]
    assert load_idx(io.BytesIO(raw)).tolist() == [7, 8, 9]
    p = tmp_path / "x.idx"
    p.write_bytes(raw)
    assert load_idx(p).tolist() == [7, 8, 9]


def test_idx_errors():
    with pytest.raises(FormatError):
        load_idx(bytes([1, 0, 8, 1, 0, 0, 0, 1, 0]))
    with pytest.raises(LengthMismatchError):
        load_idx(bytes([0, 0, 8, 1, 0, 0, 0, 3, 1]))
    with pytest.raises(LengthMismatchError):
        load_idx(bytes([0, 0, 8, 1, 0, 0, 0, 1, 1, 2]))
    with pytest.raises(UnsupportedTypeError):
        load_idx(bytes([0, 0, 0x0D, 1, 0, 0, 0, 1, 0, 0, 0, 0]))


@given(arrays(np.uint8, array_shapes(min_dims=1, max_dims=4, max_side=6)), st.booleans())
def test_idx_round_trip(arr, compress):
    assert np.array_equal(load_idx(write_idx(arr, compress)), arr)


def _naive_first_pixels(raw):
    # independent reader: fixed byte offsets of a 3-d image file
    n = int.from_bytes(raw[4:8], "big")
    rows, cols = int.from_bytes(raw[8:12], "big"), int.from_bytes(raw[12:16], "big")
    return n, rows, cols, np.array([raw[16 + i * rows * cols] for i in range(n)])


def test_idx_against_byte_offset_reader():
    imgs = np.random.default_rng(0).integers(0, 256, (50, 7, 5), dtype=np.uint8)
    raw = write_idx(imgs)
    n, r, c, first = _naive_first_pixels(raw)
    got = load_idx(raw)
    assert got.shape == (n, r, c)
    assert np.array_equal(np.bincount(got[:, 0, 0], minlength=256), np.bincount(first, minlength=256))


@pytest.mark.skipif(not os.environ.get("GPLAB_DATA_DIR"), reason="MNIST not available")
def test_official_mnist_train_images():
    from gplab.data import _find, MNIST_FILES, mnist_dir
    path = _find(mnist_dir(), MNIST_FILES["train_images"])
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    n, r, c, first = _naive_first_pixels(raw)
    got = load_idx(raw)
    assert got.shape == (60000, 28, 28) == (n, r, c)
    assert np.array_equal(np.bincount(got[:, 0, 0], minlength=256), np.bincount(first, minlength=256))


def test_load_mnist_missing(tmp_path):
    with pytest.raises(MissingDataError):
        load_mnist(tmp_path)


def test_synthetic_two_class_unit_sphere():
    b = make_batch(SyntheticSpec(n_classes=2, dim=4), 2, "unit-sphere", Rng(0))
    assert b.inputs.shape == (2, 4)
    assert np.allclose(np.linalg.norm(b.inputs, axis=1), 1.0, atol=1e-9)
    assert set(b.labels.tolist()) == {0, 1}


def test_batch_covers_all_classes():
    b = make_batch(SyntheticSpec(), 25, "scale-255", Rng(1))
    assert set(b.labels.tolist()) == set(range(10))
    assert b.inputs.min() >= 0 and b.inputs.max() <= 1


def test_batch_determinism_and_immutability():
    a = make_batch(SyntheticSpec(), 16, "unit-sphere", Rng(5))
    b = make_batch(SyntheticSpec(), 16, "unit-sphere", Rng(5))
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        a.inputs[0, 0] = 1.0


def test_dataset_batch_without_replacement_and_exhaustion():
    src = ImageSource(np.arange(40, dtype=np.uint8).reshape(10, 4), np.arange(10) % 3, 3)
    b = make_batch(src, 10, "none", Rng(0))
    assert sorted(b.inputs[:, 0].tolist()) == list(range(0, 40, 4))
    with pytest.raises(ExhaustionError):
        make_batch(src, 11, "none", Rng(0))


@given(arrays(np.float64, (5, 3), elements=st.floats(-1e3, 1e3)))
def test_unit_sphere_idempotent(x):
    once = normalize(x, "unit-sphere")
    assert np.allclose(normalize(once, "unit-sphere"), once, atol=1e-12)


def test_unknown_normalization():
    with pytest.raises(DomainError):
        normalize(np.ones((1, 2)), "zscore")
