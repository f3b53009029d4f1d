import numpy as np
import pytest

from pdmotor.errors import CorruptWeightFileError, ShapeError
from pdmotor.network import NetConfig, build, train
from pdmotor.persist import MAGIC, load_model, save_model


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(0)
    cfg = NetConfig(width_scale=256, epochs=2, batch_size=4, lr=0.001, seed=0)
    params = build(cfg)
    X = rng.normal(size=(8, 3600, 3))
    y = rng.integers(0, 3, size=8)
    params, _ = train(params, X, y, cfg)
    return cfg, params


class TestRoundTrip:
    def test_bit_exact(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        back = load_model(path, cfg)
        for name, tensor in params.state_tensors().items():
            assert np.array_equal(back.state_tensors()[name], tensor), name

    def test_running_stats_preserved(self, trained, tmp_path):
        cfg, params = trained
        assert any(np.any(l.bn_running_mean != 0) for l in params.layers)
        path = tmp_path / "m.pdw"
        save_model(params, path)
        back = load_model(path, cfg)
        for la, lb in zip(params.layers, back.layers):
            assert np.array_equal(la.bn_running_mean, lb.bn_running_mean)
            assert np.array_equal(la.bn_running_var, lb.bn_running_var)

    def test_magic_bytes(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        assert path.read_bytes()[:4] == MAGIC


class TestCorruption:
    def test_truncated_file(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptWeightFileError):
            load_model(path, cfg)

    def test_flipped_payload_byte(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        data = bytearray(path.read_bytes())
        data[-100] ^= 0xFF  # inside the payload
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptWeightFileError):
            load_model(path, cfg)

    def test_bad_magic(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptWeightFileError):
            load_model(path, cfg)

    def test_trailing_garbage(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        with open(path, "ab") as fh:
            fh.write(b"extra")
        with pytest.raises(CorruptWeightFileError):
            load_model(path, cfg)


class TestConfigMismatch:
    def test_width_scale_mismatch(self, trained, tmp_path):
        cfg, params = trained
        path = tmp_path / "m.pdw"
        save_model(params, path)
        other = NetConfig(width_scale=128, epochs=2, batch_size=4, lr=0.001, seed=0)
        with pytest.raises(ShapeError):
            load_model(path, other)
