import json
import logging

import numpy as np
import pytest

from ntrack.codec import Annotation
from ntrack.dataset import (DatasetError, load_arrays, load_dataset, load_predictions, read_pgm,
                            write_dataset, write_pgm)


def samples(rng, n):
    out = []
    for k in range(n):
        pixels = rng.integers(0, 256, (160, 160), dtype=np.uint8)
        ann = Annotation(float(rng.uniform(0, 160)), float(rng.uniform(0, 160)),
                         float(rng.uniform(0.4, 2)), bool(k % 2),
                         tuple(float(c) for c in rng.standard_normal(3)))
        out.append((k, pixels, ann))
    return out


def test_round_trip(tmp_path, rng):
    data = samples(rng, 6)
    write_dataset(tmp_path, data)
    records = list(load_dataset(tmp_path))
    assert [r.frame for r in records] == list(range(6))
    for (frame, pixels, ann), rec in zip(data, records):
        assert rec.annotation == ann
        np.testing.assert_array_equal(rec.load_image(), pixels)
    images, anns = load_arrays(tmp_path)
    assert images.shape == (6, 160, 160) and anns == [a for _, _, a in data]


def test_pgm_is_binary_p5(tmp_path):
    path = tmp_path / "x.pgm"
    write_pgm(path, np.full((160, 160), 7, np.uint8))
    assert path.read_bytes().startswith(b"P5")
    assert read_pgm(path).max() == 7


def test_wrong_image_size_rejected(tmp_path):
    path = tmp_path / "x.pgm"
    write_pgm(path, np.zeros((10, 10), np.uint8))
    with pytest.raises(DatasetError, match="160x160"):
        read_pgm(path)


def test_empty_file_warns(tmp_path, caplog):
    (tmp_path / "annotations.jsonl").write_text("")
    with caplog.at_level(logging.WARNING):
        assert list(load_dataset(tmp_path)) == []
    assert "empty" in caplog.text


def test_out_of_bounds_rejected_with_line_number(tmp_path, rng):
    write_dataset(tmp_path, samples(rng, 2))
    path = tmp_path / "annotations.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["u"] = 200
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(DatasetError, match=r"annotations.jsonl:2:.*outside"):
        list(load_dataset(tmp_path))


def test_parse_failure_and_missing_image(tmp_path, rng):
    write_dataset(tmp_path, samples(rng, 1))
    path = tmp_path / "annotations.jsonl"
    path.write_text(path.read_text() + "{not json\n")
    with pytest.raises(DatasetError, match=":2: cannot parse"):
        list(load_dataset(tmp_path))
    path.write_text(json.dumps({"frame": 9, "u": 1, "v": 1, "d": 1, "led": True}) + "\n")
    with pytest.raises(DatasetError, match="missing image"):
        list(load_dataset(tmp_path))


def test_predictions_keep_led_probability(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"frame": 3, "u": 10, "v": 20, "d": 1.5, "led": 0.25}) + "\n")
    ann, p = load_predictions(path)[3]
    assert (ann.u, ann.v, ann.d, p) == (10, 20, 1.5, 0.25)
