import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindcs.core import Datacube
from blindcs.errors import DimensionError
from blindcs.fileio import CubeFile, RunConfig, read_cube, read_image, read_png, write_cube, write_png


@given(nx=st.integers(1, 6), ny=st.integers(1, 6), nl=st.integers(1, 5), seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_cube_bytes_roundtrip_is_bit_identical(nx, ny, nl, seed):
    data = np.random.default_rng(seed).standard_normal((nx, ny, nl)).astype("<f4")
    cf = CubeFile(data, [450.0 + i for i in range(nl)], {"source": "test"})
    raw = cf.to_bytes()
    back = CubeFile.from_bytes(raw)
    assert back.data.tobytes() == data.tobytes()
    assert back.wavelengths == cf.wavelengths and back.meta == {"source": "test"}
    assert back.to_bytes() == raw


def test_payload_is_channel_outermost(tmp_path):
    data = np.arange(12, dtype=float).reshape(2, 3, 2)
    path = tmp_path / "c.hsdc"
    write_cube(path, Datacube(data))
    raw = path.read_bytes()
    header, payload = raw.split(b"\n\n", 1)
    assert header.split(b"\n")[:3] == [b"HSDC1", b"dims 2 3 2", b"dtype f32le"]
    vals = np.frombuffer(payload, "<f4")
    assert vals.tolist() == data[:, :, 0].ravel().tolist() + data[:, :, 1].ravel().tolist()
    assert np.array_equal(read_cube(path).to_cube().data, data)


def test_malformed_cube_files_are_rejected():
    good = CubeFile(np.zeros((2, 2, 1), "<f4")).to_bytes()
    with pytest.raises(ValueError, match="magic"):
        CubeFile.from_bytes(b"XXXX1" + good[5:])
    with pytest.raises(ValueError, match="payload"):
        CubeFile.from_bytes(good[:-1])
    with pytest.raises(ValueError, match="dtype"):
        CubeFile.from_bytes(good.replace(b"f32le", b"f64le"))
    with pytest.raises(ValueError):
        CubeFile.from_bytes(b"HSDC1\ndims 2 2 1\n")
    with pytest.raises(DimensionError):
        CubeFile(np.zeros((2, 2, 2), "<f4"), [1.0]).to_bytes()
    with pytest.raises(ValueError):
        CubeFile(np.zeros((2, 2, 1), "<f4"), None, {"bad key": "x"}).to_bytes()


def test_run_config_parse_and_dump():
    text = "# comment\nseed = 3\nk = 16\nrgb = true\ntol = none\nout = runs/a  # trailing\n"
    cfg = RunConfig.parse(text)
    assert cfg.get("seed") == 3 and cfg.get("k") == 16 and cfg.get("rgb") is True
    assert cfg.get("tol") is None and cfg.get("out") == "runs/a"
    again = RunConfig.parse(cfg.dumps())
    assert again.values == {k: v for k, v in cfg.values.items() if v is not None}


def test_run_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.parse("colour = red\n")
    with pytest.raises(ValueError):
        RunConfig.parse("seed = three\n")
    with pytest.raises(ValueError):
        RunConfig.parse("just words\n")
    with pytest.raises(ValueError):
        RunConfig().get("nope")


def test_run_config_merge_prefers_overrides():
    cfg = RunConfig({"seed": 1, "k": 8})
    out = cfg.merged({"seed": 5, "k": None, "iters": 3})
    assert out.get("seed") == 5 and out.get("k") == 8 and out.get("iters") == 3
    assert cfg.get("seed") == 1


def test_png_roundtrip_and_image_reader(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(float)
    path = tmp_path / "a.png"
    write_png(path, img)
    assert np.array_equal(read_png(path), img)
    assert np.array_equal(read_image(path), img)
    cpath = tmp_path / "a.hsdc"
    write_cube(cpath, img)
    assert np.array_equal(read_image(cpath), img)
    write_cube(cpath, img[:, :, :2])
    with pytest.raises(DimensionError):
        read_image(cpath)
    bad = tmp_path / "a.txt"
    bad.write_text("hello")
    with pytest.raises(ValueError):
        read_image(bad)
