"""
Unit Tests for the Model, Quantized Views and Checkpoints
"""

import numpy as np
import pytest


class TestBuildModel:
    """Tests for build_model and the forward helpers."""

    def test_deterministic_init(self, tiny_config):
        """Test the same seed gives bit-identical parameters."""
        from src.models.network import build_model

        a = build_model(tiny_config)
        b = build_model(tiny_config)

        assert a.fingerprint() == b.fingerprint()
        assert build_model(tiny_config.model_copy(update={"seed": 1})).fingerprint() != a.fingerprint()

    def test_tiny_preset_shapes(self):
        """Test the default tiny preset embeds to 64 and classifies into 10."""
        from src.models.network import build_model, classify, encode, project

        model = build_model()
        images = np.random.default_rng(0).uniform(size=(2, 3, 32, 32)).astype(np.float32)
        h = encode(model, images)

        assert h.shape == (2, 64)
        assert project(model, h).shape == (2, 32)
        assert classify(model, h).shape == (2, 10)

    def test_resnet_lite_shapes(self, small_images):
        """Test the residual preset produces the configured embedding."""
        from src.models.network import build_model, encode

        model = build_model({"preset": "resnet-lite", "channels": [4, 8], "embedding_dim": 16})

        assert encode(model, small_images).shape == (8, 16)

    def test_embedding_dim_zero(self):
        """Test invalid dimensions raise ModelConfigError."""
        from src.core.errors import ModelConfigError
        from src.models.network import build_model

        with pytest.raises(ModelConfigError):
            build_model({"embedding_dim": 0})

    def test_nan_input(self, tiny_model, small_images):
        """Test non-finite pixels are rejected."""
        from src.core.errors import InvalidInputError
        from src.models.network import encode

        images = small_images.copy()
        images[0, 0, 0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            encode(tiny_model, images)

    def test_wrong_channel_count(self, tiny_model):
        """Test channel mismatches raise ShapeError."""
        from src.core.errors import ShapeError
        from src.models.network import encode

        with pytest.raises(ShapeError):
            encode(tiny_model, np.zeros((1, 1, 32, 32), dtype=np.float32))

    def test_identical_images_identical_rows(self, tiny_model, small_images):
        """Test encode is row-wise pure."""
        from src.models.network import encode

        batch = np.stack([small_images[0], small_images[0]])
        h = encode(tiny_model, batch).data

        np.testing.assert_array_equal(h[0], h[1])

    def test_zero_embedding_uniform_logits(self, tiny_model):
        """Test a zero embedding with zero bias gives uniform logits."""
        from src.core.tensor import Tensor
        from src.models.network import classify

        logits = classify(tiny_model, Tensor(np.zeros((3, tiny_model.embedding_dim)))).data

        np.testing.assert_array_equal(logits, np.zeros_like(logits))

    def test_gradient_reaches_encoder(self, tiny_model, small_images):
        """Test project(encode(x)) is taped end to end."""
        from src.models.network import encode, project

        project(tiny_model, encode(tiny_model, small_images)).sum().backward()

        assert tiny_model.layer("encoder.conv1").weight.grad is not None
        assert tiny_model.layer("classifier").weight.grad is None

    def test_unknown_layer(self, tiny_model):
        """Test layer lookup names the available layers."""
        from src.core.errors import ModelConfigError

        with pytest.raises(ModelConfigError, match="encoder.conv1"):
            tiny_model.layer("encoder.conv9")

    def test_weight_layers_in_forward_order(self, tiny_model):
        """Test weight-bearing layer names and order."""
        assert list(tiny_model.weight_layers()) == [
            "encoder.conv1",
            "encoder.conv2",
            "encoder.conv3",
            "projection_head.fc1",
            "projection_head.fc2",
            "classifier",
        ]

    def test_state_dict_round_trip(self, tiny_model, tiny_config):
        """Test load_state_dict restores another model's parameters."""
        from src.models.network import build_model

        other = build_model(tiny_config.model_copy(update={"seed": 5}))
        other.load_state_dict(tiny_model.state_dict())

        assert other.fingerprint() == tiny_model.fingerprint()

    def test_evaluate_accuracy_empty(self, tiny_model):
        """Test accuracy on an empty set is an error."""
        from src.core.errors import InvalidInputError
        from src.models.network import evaluate_accuracy

        with pytest.raises(InvalidInputError):
            evaluate_accuracy(tiny_model, np.zeros((0, 3, 32, 32), dtype=np.float32), np.zeros(0))


class TestQuantization:
    """Tests for int8 views and bit flips."""

    def test_endpoints(self):
        """Test +-1.27 quantizes to +-127 with scale 0.01."""
        from src.models.quantization import compute_scale, quantize

        w = np.array([1.27, -1.27], dtype=np.float32)
        scale = compute_scale(w)

        assert scale == pytest.approx(0.01, abs=1e-7)
        np.testing.assert_array_equal(quantize(w, scale), [127, -127])

    def test_zero_layer(self, tiny_model):
        """Test an all-zero layer gets scale 1 and zero codes."""
        from src.models.quantization import quantize_layer

        tiny_model.classifier.weight.assign(np.zeros(tiny_model.classifier.weight.shape))
        view = quantize_layer(tiny_model, "classifier")

        assert view.scale == 1.0
        assert not view.qweights.any()

    def test_round_trip_error_bound(self):
        """Test dequantize(quantize(w)) stays within scale / 2."""
        from src.models.quantization import compute_scale, dequantize, quantize

        for seed in range(200):
            w = np.random.default_rng(seed).normal(size=64).astype(np.float32)
            scale = compute_scale(w)
            error = np.abs(dequantize(quantize(w, scale), scale) - w)
            assert error.max() <= scale / 2 + 1e-4 * scale

    def test_quantize_installs_shadow(self, tiny_model):
        """Test the model weight equals the view's shadow after quantization."""
        from src.models.quantization import quantize_layer

        view = quantize_layer(tiny_model, "encoder.conv2")

        np.testing.assert_array_equal(tiny_model.layer("encoder.conv2").weight.data.reshape(-1), view.shadow)
        assert quantize_layer(tiny_model, "encoder.conv2") is view

    def test_quantize_unknown_layer(self, tiny_model):
        """Test unknown layers raise QuantizationError."""
        from src.core.errors import QuantizationError
        from src.models.quantization import quantize_layer

        with pytest.raises(QuantizationError):
            quantize_layer(tiny_model, "encoder.relu1")

    def test_xor_examples(self, tiny_model):
        """Test 5 -> 7 on bit 1 and 1 -> -127 on the sign bit."""
        from src.models.quantization import flip_bit, quantize_layer

        view = quantize_layer(tiny_model, "classifier")
        view.qweights[0] = 5
        view.qweights[1] = 1
        flip_bit(view, 0, 1)
        flip_bit(view, 1, 7)

        assert view.qweights[0] == 7
        assert view.qweights[1] == -127
        assert view.shadow[1] == pytest.approx(-127 * view.scale)
        assert tiny_model.classifier.weight.data.reshape(-1)[1] == view.shadow[1]

    def test_double_flip_identity(self, tiny_config):
        """Test flipping the same bit twice restores the full model state bit-exactly."""
        from src.models.network import build_model
        from src.models.quantization import BITS, flip_bit, quantize_model

        model = build_model(tiny_config)
        views = quantize_model(model)
        before = model.fingerprint()
        codes = {name: v.qweights.copy() for name, v in views.items()}
        rng = np.random.default_rng(0)
        names = list(views)

        for _ in range(1000):
            view = views[names[rng.integers(len(names))]]
            index = int(rng.integers(view.size))
            bit = int(rng.integers(BITS))
            flip_bit(view, index, bit)
            flip_bit(view, index, bit)

        assert model.fingerprint() == before
        for name, view in views.items():
            np.testing.assert_array_equal(view.qweights, codes[name])

    def test_flip_out_of_range(self, tiny_model):
        """Test bad index or bit raises QuantizationError."""
        from src.core.errors import QuantizationError
        from src.models.quantization import flip_bit, quantize_layer

        view = quantize_layer(tiny_model, "classifier")
        with pytest.raises(QuantizationError):
            flip_bit(view, view.size, 0)
        with pytest.raises(QuantizationError):
            flip_bit(view, 0, 8)

    def test_bit_delta_matches_flip(self, tiny_model):
        """Test bit_delta predicts the weight change of every flip."""
        from src.models.quantization import BITS, bit_delta, flip_bit, quantize_layer

        view = quantize_layer(tiny_model, "projection_head.fc2")
        for bit in range(BITS):
            delta = bit_delta(view, bit)
            before = view.shadow[3]
            flip_bit(view, 3, bit)
            assert view.shadow[3] - before == pytest.approx(float(delta[3]), rel=1e-4)
            flip_bit(view, 3, bit)

    def test_release_keeps_weights(self, tiny_model):
        """Test releasing a view keeps the dequantized weights installed."""
        from src.models.quantization import quantize_layer

        view = quantize_layer(tiny_model, "classifier")
        shadow = view.shadow.copy()
        tiny_model.release_quantization()

        assert tiny_model.quantized == {}
        np.testing.assert_array_equal(tiny_model.classifier.weight.data.reshape(-1), shadow)


class TestCheckpoint:
    """Tests for the binary checkpoint format."""

    def test_save_load_save_identical(self, tiny_model):
        """Test save -> load -> save is byte-identical."""
        from src.models.checkpoint import load_checkpoint, save_checkpoint

        first = save_checkpoint(tiny_model)

        assert first[:8] == b"CFDR\x01\x00\x00\x00"
        assert save_checkpoint(load_checkpoint(first)) == first

    def test_round_trip_with_quantized_views(self, tiny_model):
        """Test quantized codes, scales and flipped weights survive a round trip."""
        from src.models.checkpoint import load_checkpoint, save_checkpoint
        from src.models.quantization import flip_bit, quantize_layer

        view = quantize_layer(tiny_model, "encoder.conv1")
        flip_bit(view, 2, 7)
        restored = load_checkpoint(save_checkpoint(tiny_model))
        restored_view = restored.quantized["encoder.conv1"]

        assert restored.fingerprint() == tiny_model.fingerprint()
        assert restored_view.scale == view.scale
        np.testing.assert_array_equal(restored_view.qweights, view.qweights)

    def test_many_round_trips(self, tiny_config):
        """Test bit-exact round trips over many random flips."""
        from src.models.checkpoint import load_checkpoint, save_checkpoint
        from src.models.network import build_model
        from src.models.quantization import BITS, flip_bit, quantize_layer

        model = build_model(tiny_config)
        view = quantize_layer(model, "classifier")
        rng = np.random.default_rng(3)
        for _ in range(50):
            flip_bit(view, int(rng.integers(view.size)), int(rng.integers(BITS)))
            data = save_checkpoint(model)
            assert save_checkpoint(load_checkpoint(data)) == data

    def test_metadata_and_profile(self, tiny_model):
        """Test metadata and the profile record are restored."""
        from src.models.checkpoint import read_checkpoint, save_checkpoint

        tiny_model.phase = "phase_b"
        contents = read_checkpoint(save_checkpoint(tiny_model, profile={"l_c": 1.5}))

        assert contents.metadata.phase == "phase_b"
        assert contents.model.phase == "phase_b"
        assert contents.profile == {"l_c": 1.5}

    def test_bad_magic(self, tiny_model):
        """Test a corrupted magic tag is rejected."""
        from src.core.errors import CheckpointError
        from src.models.checkpoint import load_checkpoint, save_checkpoint

        original = save_checkpoint(tiny_model)
        assert original[:4] == b"CFDR"

        data = b"CGCK" + original[4:]
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(data)

    def test_version_mismatch(self, tiny_model):
        """Test an unknown version is rejected."""
        import struct

        from src.core.errors import CheckpointError
        from src.models.checkpoint import load_checkpoint, save_checkpoint

        data = save_checkpoint(tiny_model)
        data = data[:4] + struct.pack("<I", 2) + data[8:]
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(data)

    def test_truncated(self, tiny_model):
        """Test a truncated payload names the byte offset."""
        from src.core.errors import CheckpointError
        from src.models.checkpoint import load_checkpoint, save_checkpoint

        data = save_checkpoint(tiny_model)
        with pytest.raises(CheckpointError, match=f"byte offset {len(data) - 10}"):
            load_checkpoint(data[:-10])
