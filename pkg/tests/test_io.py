import json
import os

from stlab import io


def test_fmt():
    assert io.fmt(0.1) == "0.10000000000000001"
    assert io.fmt(float("nan")) == "nan"
    assert io.fmt(float("-inf")) == "-inf"
    assert io.fmt(True) == "1"
    assert io.fmt(3) == "3"


def test_csv_dialect_and_mirror(tmp_path):
    paths = io.write_csv(tmp_path / "a.csv", ("x", "y"), [(1, 0.5), (2, 1 / 3)], dat_mirror=True)
    raw = (tmp_path / "a.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.decode().splitlines() == ["x,y", "1,0.5", "2,0.33333333333333331"]
    dat = (tmp_path / "a.dat").read_text().splitlines()
    assert dat[0] == "# x y" and dat[2] == "2 0.33333333333333331"
    assert [p.name for p in paths] == ["a.csv", "a.dat"]
    header, rows = io.read_csv(tmp_path / "a.csv")
    assert header == ["x", "y"] and float(rows[1][1]) == 1 / 3


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_bytes(tmp_path / "sub" / "f.bin", b"abc")
    assert os.listdir(tmp_path / "sub") == ["f.bin"]


def test_json_and_digest(tmp_path):
    import numpy as np

    p = io.write_json(tmp_path / "r.json", {"b": np.float64(1.5), "a": np.arange(2)})
    assert json.loads(p.read_text()) == {"a": [0, 1], "b": 1.5}
    d1 = io.digest(p)
    io.write_json(tmp_path / "r.json", {"a": [0, 1], "b": 1.5})
    assert io.digest(p) == d1 and len(d1) == 64
