import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbench.data import (
    Dataset,
    batch_indices,
    batches,
    linear_teacher,
    load_mnist_idx,
    matrix_completion_batch,
    matrix_completion_task,
    one_hot,
    toy_regression,
    write_idx,
)
from pcbench.errors import FormatError, ShapeError
from pcbench.numerics import Rng


def write_pair(tmp_path, n=5, rows=3, cols=2, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, rows, cols))
    labels = rng.integers(0, 10, size=n)
    write_idx(images, labels, tmp_path / "img", tmp_path / "lab")
    return images, labels


def test_idx_round_trip(tmp_path):
    images, labels = write_pair(tmp_path)
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert np.allclose(ds.inputs, images.reshape(5, -1) / 255.0)
    assert np.array_equal(ds.targets.argmax(axis=1), labels)
    std = load_mnist_idx(tmp_path / "img", tmp_path / "lab", standardise=True)
    assert abs(std.inputs.mean()) < 1e-12 and std.inputs.std() == pytest.approx(1.0)


def test_idx_header_layout(tmp_path):
    write_pair(tmp_path, n=2, rows=4, cols=3)
    raw = (tmp_path / "img").read_bytes()
    assert struct.unpack(">iiii", raw[:16]) == (2051, 2, 4, 3)
    assert len(raw) == 16 + 2 * 4 * 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 45))
def test_truncated_image_file_reports_offset(tmp_path_factory, cut):
    tmp = tmp_path_factory.mktemp("idx")
    write_pair(tmp)
    raw = (tmp / "img").read_bytes()
    (tmp / "img").write_bytes(raw[:cut])
    with pytest.raises(FormatError) as info:
        load_mnist_idx(tmp / "img", tmp / "lab")
    assert info.value.offset <= cut


def test_bad_magic_and_label_range(tmp_path):
    write_pair(tmp_path)
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "lab", tmp_path / "lab")
    raw = bytearray((tmp_path / "lab").read_bytes())
    raw[9] = 12
    (tmp_path / "lab").write_bytes(bytes(raw))
    with pytest.raises(FormatError) as info:
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert info.value.offset == 9


def test_count_mismatch(tmp_path):
    write_idx(np.zeros((3, 2, 2)), np.zeros(2), tmp_path / "img", tmp_path / "lab")
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 20), st.integers(0, 1000))
def test_batches_partition_the_dataset(n, size, seed):
    ds = Dataset(np.arange(n, dtype=float)[:, None], np.zeros((n, 1)))
    seen = np.concatenate([b.x[:, 0] for b in batches(ds, size, Rng(seed))])
    assert sorted(seen) == list(range(n))
    idx = batch_indices(n, size, Rng(seed))
    assert sum(len(i) for i in idx) == n


def test_one_hot_and_toy_tasks():
    assert np.array_equal(one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])
    toy = toy_regression(50, Rng(0))
    assert np.array_equal(toy.targets, -toy.inputs)
    teacher = linear_teacher(40, 3, 2, Rng(0))
    coef, *_ = np.linalg.lstsq(teacher.inputs, teacher.targets, rcond=None)
    assert np.allclose(teacher.inputs @ coef, teacher.targets)


def test_matrix_completion_task():
    target, mask = matrix_completion_task(Rng(0), size=10, rank=3, n_masked=20)
    assert np.linalg.matrix_rank(target) == 3
    assert mask.sum() == 80
    batch = matrix_completion_batch(target, mask)
    assert np.array_equal(batch.x, np.eye(10))
    assert np.array_equal(batch.y[2], target[:, 2])


def test_dataset_validation(tmp_path):
    with pytest.raises(ShapeError):
        Dataset(np.ones((2, 1)), np.ones((3, 1)))
    with pytest.raises(ShapeError):
        Dataset(np.array([[np.nan]]), np.ones((1, 1)))
    ds = Dataset(np.ones((2, 2)), np.zeros((2, 1)))
    ds.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,y0"
