import numpy as np
import pytest
from PIL import Image

from pointseg import (
    DetectionSet,
    InstanceMask,
    PointSet,
    RepelMap,
    RepelParams,
    TriStateLabelMap,
    fileio,
    init_params,
)
from pointseg.model import TrainLogEntry


def test_image_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(9, 13, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    fileio.write_image_png(path, image)
    assert (fileio.read_image_png(path) == image).all()


def test_image_png_rejects_wrong_shape_and_mode(tmp_path):
    with pytest.raises(ValueError, match="uint8"):
        fileio.write_image_png(tmp_path / "bad.png", np.zeros((4, 4), dtype=np.uint8))
    gray = tmp_path / "gray.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(gray)
    with pytest.raises(ValueError, match="RGB"):
        fileio.read_image_png(gray)


def test_points_csv_round_trip(tmp_path):
    points = PointSet([(1.5, 2.25), (10.0, 0.125)])
    path = tmp_path / "pts.csv"
    fileio.write_points_csv(path, points)
    assert path.read_text().splitlines()[0] == "x,y"
    back = fileio.read_points_csv(path)
    assert (back.points == points.points).all()
    assert back.classes is None


def test_points_csv_with_classes(tmp_path):
    points = PointSet([(1.0, 2.0), (3.0, 4.0)], classes=[0, 2])
    path = tmp_path / "ptsc.csv"
    fileio.write_points_csv(path, points)
    back = fileio.read_points_csv(path)
    assert (back.points == points.points).all()
    assert list(back.classes) == [0, 2]


def test_points_csv_headerless_and_blank_lines(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("3.0,4.0\n\n5.0,6.0\n")
    back = fileio.read_points_csv(path)
    assert back.points.tolist() == [[3.0, 4.0], [5.0, 6.0]]


def test_points_csv_bad_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1.0,2.0\noops,3.0\n")
    with pytest.raises(ValueError, match="row 2"):
        fileio.read_points_csv(path)


def test_detections_csv_round_trip(tmp_path):
    dets = DetectionSet(np.array([[4.0, 5.0], [1.25, 9.5]]), np.array([0.75, 0.5]))
    path = tmp_path / "det.csv"
    fileio.write_detections_csv(path, dets)
    back = fileio.read_detections_csv(path)
    assert (back.points == dets.points).all()
    assert (back.scores == dets.scores).all()


def test_tristate_png_round_trip(tmp_path):
    labels = np.full((6, 7), 255, dtype=np.uint8)
    labels[0, :] = 0
    labels[3, 2:5] = 1
    path = tmp_path / "tri.png"
    fileio.write_tristate_png(path, TriStateLabelMap(labels))
    back = fileio.read_tristate_png(path)
    assert (back.labels == labels).all()


def test_repel_png_quantization(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.random((11, 8))
    repel = RepelMap(values, RepelParams(alpha=0.05, r=70.0))
    path = tmp_path / "repel.png"
    fileio.write_repel_png(path, repel)
    meta = fileio.read_json(tmp_path / "repel.json")
    assert meta == {"alpha": 0.05, "r": 70.0, "scale": 65535}
    back = fileio.read_repel_png(path)
    assert np.abs(back.values - values).max() <= 0.5 / 65535 + 1e-12
    assert back.params == repel.params


def test_instances_png_round_trip(tmp_path):
    labels = np.zeros((5, 9), dtype=np.int32)
    labels[1:3, 1:4] = 1
    labels[4, 7] = 2
    path = tmp_path / "inst.png"
    fileio.write_instances_png(path, InstanceMask(labels))
    back = fileio.read_instances_png(path)
    assert back.labels.dtype == np.int32
    assert (back.labels == labels).all()


def test_instances_png_id_limit(tmp_path):
    labels = np.zeros((1, 2), dtype=np.int64)
    labels[0, 1] = 65536
    with pytest.raises(ValueError, match="65535"):
        fileio.write_instances_png(tmp_path / "big.png", InstanceMask(labels))


def test_weights_round_trip(tmp_path):
    params = init_params(seed=3)
    path = tmp_path / "w.npy"
    fileio.write_weights(path, params)
    back = fileio.read_weights(path)
    assert (back.to_vector() == params.to_vector()).all()


def test_loss_log_csv(tmp_path):
    log = [
        TrainLogEntry(0, 0, "voronoi", 0.6931471805599453),
        TrainLogEntry(1, 0, "repel", 0.25),
    ]
    path = tmp_path / "log.csv"
    fileio.write_loss_log_csv(path, log)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,epoch,kind,value"
    assert lines[1].startswith("0,0,voronoi,0.6931471805599")
    assert lines[2] == "1,0,repel,0.25"


def test_write_json_formatting(tmp_path):
    path = tmp_path / "obj.json"
    fileio.write_json(path, {"b": 1, "a": [1, 2]})
    text = path.read_text()
    assert text == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'
    assert fileio.read_json(path) == {"a": [1, 2], "b": 1}


def test_writers_are_byte_deterministic(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    points = PointSet([(1.0, 2.0)])
    repel = RepelMap(rng.random((8, 8)), RepelParams(alpha=0.05, r=70.0))
    for name, writer, payload in (
        ("i.png", fileio.write_image_png, image),
        ("p.csv", fileio.write_points_csv, points),
        ("r.png", fileio.write_repel_png, repel),
    ):
        first, second = tmp_path / f"1{name}", tmp_path / f"2{name}"
        writer(first, payload)
        writer(second, payload)
        assert first.read_bytes() == second.read_bytes()


def test_probability_npy(tmp_path):
    values = np.linspace(0, 1, 12, dtype=np.float64).reshape(3, 4)
    path = tmp_path / "prob.npy"
    fileio.write_probability_npy(path, values)
    assert np.allclose(np.load(path), values, atol=1e-7)
    assert np.load(path).dtype == np.float32


def test_render_overlay_paints_boundaries():
    image = np.zeros((7, 7, 3), dtype=np.uint8)
    labels = np.zeros((7, 7), dtype=np.int32)
    labels[2:5, 2:5] = 1
    out = fileio.render_overlay(image, InstanceMask(labels), color=(255, 0, 0))
    assert (out[2, 2] == (255, 0, 0)).all()  # corner of the square is boundary
    assert (out[3, 3] == 0).all()  # interior untouched
    assert (out[0, 0] == 0).all()  # background untouched
    assert (image == 0).all()  # input not mutated
    with pytest.raises(ValueError, match="dims"):
        fileio.render_overlay(np.zeros((5, 5, 3), dtype=np.uint8), InstanceMask(labels))


def test_render_detections_crosses_and_clipping():
    image = np.zeros((6, 6, 3), dtype=np.uint8)
    dets = DetectionSet(np.array([[0.0, 0.0], [3.0, 3.0]]), np.array([1.0, 1.0]))
    out = fileio.render_detections(image, dets, color=(0, 255, 0))
    assert (out[3, 3] == (0, 255, 0)).all()
    assert (out[3, 1] == (0, 255, 0)).all()
    assert (out[0, 0] == (0, 255, 0)).all()  # corner cross is clipped, not an error
    assert (image == 0).all()
