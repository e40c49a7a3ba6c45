import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ocular.exceptions import FormatError
from ocular.models import build_yolov2, load_model, load_weights, read_weights_header, save_weights
from ocular.models.weights import HEADER_SIZE, MAGIC, infer_profile, payload_size
from ocular.schemas.network import Profile


@pytest.fixture
def trained_like(small_config, rng):
    """Model whose parameters are all non-default"""
    model = build_yolov2(small_config, seed=2)
    for layer in model.conv_layers.values():
        layer.conv.bias[:] = rng.standard_normal(layer.conv.bias.shape)
        if layer.bn is not None:
            layer.bn.beta[:] = rng.standard_normal(layer.bn.beta.shape)
            layer.bn.gamma[:] = rng.uniform(0.5, 1.5, layer.bn.gamma.shape)
            layer.bn.running_mean[:] = rng.standard_normal(layer.bn.running_mean.shape)
            layer.bn.running_var[:] = rng.uniform(0.5, 2.0, layer.bn.running_var.shape)
    return model


def all_arrays(model):
    arrays = {}
    for index, layer in model.conv_layers.items():
        arrays[f"{index}.weights"] = layer.conv.weights
        if layer.bn is None:
            arrays[f"{index}.bias"] = layer.conv.bias
        else:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                arrays[f"{index}.{name}"] = getattr(layer.bn, name)
    return arrays


class TestRoundTrip:
    def test_bit_exact(self, trained_like, small_config, tmp_path):
        path = str(tmp_path / "model.weights")
        save_weights(trained_like, path)
        restored = load_weights(build_yolov2(small_config, seed=99), path)
        expected = all_arrays(trained_like)
        for key, array in all_arrays(restored).items():
            assert_array_equal(array.view(np.uint32), expected[key].view(np.uint32), err_msg=key)

    def test_outputs_identical_after_reload(self, trained_like, tmp_path, rng):
        path = str(tmp_path / "model.weights")
        save_weights(trained_like, path)
        restored = load_model(path, trained_like.config)
        x = rng.random((1, 1, 64, 64)).astype(np.float32)
        assert_array_equal(restored.forward(x), trained_like.forward(x))

    def test_file_size(self, trained_like, tmp_path):
        path = tmp_path / "model.weights"
        save_weights(trained_like, str(path))
        assert path.stat().st_size == HEADER_SIZE + payload_size(trained_like)


class TestHeader:
    def test_records_config(self, small_config, tmp_path):
        path = str(tmp_path / "model.weights")
        save_weights(build_yolov2(small_config), path)
        assert read_weights_header(path) == (2, 5, 1, 64)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.weights"
        path.write_bytes(b"NOTWGHTS" + struct.pack("<4i", 2, 5, 3, 416))
        with pytest.raises(FormatError, match="not a weights file"):
            read_weights_header(str(path))

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.weights"
        path.write_bytes(MAGIC + b"\x02\x00")
        with pytest.raises(FormatError, match="truncated header"):
            read_weights_header(str(path))


class TestLoadErrors:
    def test_truncated_payload_names_layer(self, small_config, tmp_path):
        path = tmp_path / "model.weights"
        save_weights(build_yolov2(small_config), str(path))
        data = path.read_bytes()
        path.write_bytes(data[:-100])
        with pytest.raises(FormatError) as exc:
            load_weights(build_yolov2(small_config), str(path))
        assert "layer 23" in str(exc.value)
        assert "expected" in str(exc.value)

    def test_trailing_data(self, small_config, tmp_path):
        path = tmp_path / "model.weights"
        save_weights(build_yolov2(small_config), str(path))
        path.write_bytes(path.read_bytes() + b"\x00" * 4)
        with pytest.raises(FormatError, match="trailing data"):
            load_weights(build_yolov2(small_config), str(path))

    def test_class_count_mismatch(self, small_config, tmp_path):
        path = str(tmp_path / "model.weights")
        save_weights(build_yolov2(small_config), path)
        one_class = small_config.model_copy(update={"num_classes": 1})
        with pytest.raises(FormatError, match="config mismatch"):
            load_weights(build_yolov2(one_class), path)


class TestLoadModel:
    def test_tiny_profile_inferred_from_size(self, small_config, tmp_path):
        path = str(tmp_path / "model.weights")
        save_weights(build_yolov2(small_config), path)
        model = load_model(path)
        assert model.config.profile == Profile.TINY
        assert model.config.num_classes == 2
        assert model.config.input_channels == 1
        assert infer_profile(path, model.config) == Profile.TINY

    def test_header_wins_over_config(self, small_config, tmp_path):
        path = str(tmp_path / "model.weights")
        save_weights(build_yolov2(small_config), path)
        other = small_config.model_copy(update={"input_size": 128})
        assert load_model(path, other).config.input_size == 64

    @pytest.mark.parametrize("header", [(2, 5, 1, 100), (3, 5, 3, 416), (2, 5, 2, 64), (2, 0, 3, 416)])
    def test_invalid_header_network(self, tmp_path, header):
        path = tmp_path / "odd.weights"
        path.write_bytes(MAGIC + struct.pack("<4i", *header))
        with pytest.raises(FormatError, match="not a valid network"):
            load_model(str(path))

    def test_invalid_header_network_with_config(self, small_config, tmp_path):
        path = tmp_path / "odd.weights"
        path.write_bytes(MAGIC + struct.pack("<4i", 2, 5, 1, 100))
        with pytest.raises(FormatError, match="not a valid network"):
            load_model(str(path), small_config)
