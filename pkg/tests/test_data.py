import numpy as np
import pytest

from fitprint import data as D


def test_synth_deterministic_and_sized():
    a = D.synth_dataset(10, 200, seed=4)
    b = D.synth_dataset(10, 200, seed=4)
    assert len(a) == 2000
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert a.images.min() >= 0 and a.images.max() <= 1


def test_synth_needs_two_classes():
    with pytest.raises(D.DatasetError):
        D.synth_dataset(1, 5)


def test_dataset_validation():
    with pytest.raises(D.DatasetError):
        D.Dataset(np.full((1, 1, 2, 2), 1.5), np.array([0]), 2)
    with pytest.raises(D.DatasetError):
        D.Dataset(np.zeros((1, 1, 2, 2)), np.array([3]), 2)


def test_csv_roundtrip(tmp_path):
    data = D.synth_dataset(3, 4, image_shape=(1, 6, 6), seed=1)
    D.export_csv(data, tmp_path / "d.csv")
    back = D.ingest_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.images, data.images)
    assert np.array_equal(back.labels, data.labels)


def test_csv_integer_pixels_scaled(tmp_path):
    (tmp_path / "d.csv").write_text("label,p0,p1,p2,p3\n1,0,255,51,102\n0,0,0,0,0\n")
    data = D.ingest_dataset(tmp_path / "d.csv")
    assert data.images.shape == (2, 1, 2, 2)
    assert np.allclose(data.images[0].ravel(), [0, 1, 0.2, 0.4])
    assert data.labels.tolist() == [1, 0]


def test_csv_pixel_300_rejected(tmp_path):
    (tmp_path / "d.csv").write_text("label,p0,p1,p2,p3\n1,0,300,51,102\n")
    with pytest.raises(D.DatasetError, match="row 2 pixel p1"):
        D.ingest_dataset(tmp_path / "d.csv")


def test_csv_errors_name_record(tmp_path):
    (tmp_path / "a.csv").write_text("label,p0,p1,p2,p3\n1,0,1\n")
    with pytest.raises(D.DatasetError, match="row 2"):
        D.ingest_dataset(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("label,p0\n")
    with pytest.raises(D.DatasetError, match="no samples found"):
        D.ingest_dataset(tmp_path / "b.csv")


def test_empty_image_directory(tmp_path):
    with pytest.raises(D.DatasetError, match="no samples found"):
        D.ingest_dataset(tmp_path, format="image-directory")


def test_image_directory_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = {}
    for cls in ("cat", "dog"):
        (tmp_path / cls).mkdir()
        for i in range(2):
            img = np.round(rng.uniform(size=(1, 5, 4)) * 255) / 255
            D.write_pnm(tmp_path / cls / f"{i}.pgm", img)
            imgs[(cls, i)] = img
    data = D.ingest_dataset(tmp_path, format="image-directory")
    assert data.num_classes == 2
    assert data.labels.tolist() == [0, 0, 1, 1]
    assert np.allclose(data.images[2], imgs[("dog", 0)])


def test_read_pnm_rejects_ascii(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(D.DatasetError, match="unsupported"):
        D.read_pnm(tmp_path / "a.pgm")


def test_numeric_labels_sort_numerically(tmp_path):
    (tmp_path / "d.csv").write_text("label,p0\n10,0\n2,0\n1,0\n")
    data = D.ingest_dataset(tmp_path / "d.csv", image_shape=(1, 1, 1))
    assert data.labels.tolist() == [2, 1, 0]


def test_public_images_in_range_and_seeded():
    a = D.public_images(5, seed=2)
    assert a.shape == (5, 1, 28, 28)
    assert a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, D.public_images(5, seed=2))
