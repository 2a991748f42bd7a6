"""
Unit Tests for the Contrastive Loss and Training Phases
"""

import math

import numpy as np
import pytest


def _naive_loss(z_a, z_b, temperature):
    """Double loop over pairs with explicit cosine similarities."""
    n = len(z_a)

    def sim(u, v):
        return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

    total = 0.0
    for i in range(n):
        numerator = math.exp(sim(z_a[i], z_b[i]) / temperature)
        denominator = 0.0
        for k in range(n):
            if k == i:
                continue
            denominator += math.exp(sim(z_a[i], z_b[k]) / temperature)
            denominator += math.exp(sim(z_b[i], z_a[k]) / temperature)
        total -= math.log(numerator / denominator)
    return total


class TestCosineSim:
    """Tests for cosine_sim."""

    def test_known_values(self):
        """Test identity, orthogonality and a hand-computed pair."""
        from src.services.contrastive import cosine_sim

        assert cosine_sim(np.array([2.0, 1.0]), np.array([2.0, 1.0])) == pytest.approx(1.0)
        assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        assert cosine_sim(np.array([3.0, 4.0]), np.array([4.0, 3.0])) == pytest.approx(24 / 25)

    def test_zero_vector(self):
        """Test a zero vector has similarity 0."""
        from src.services.contrastive import cosine_sim

        assert cosine_sim(np.zeros(3), np.ones(3)) == 0.0

    def test_length_mismatch(self):
        """Test vectors of different lengths are rejected."""
        from src.core.errors import LossError
        from src.services.contrastive import cosine_sim

        with pytest.raises(LossError):
            cosine_sim(np.ones(2), np.ones(3))


class TestContrastiveLoss:
    """Tests for contrastive_loss."""

    def test_orthonormal_case(self):
        """Test two orthonormal pairs at temperature 1 give 2(ln 2 - 1)."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import LossConfig, contrastive_loss

        e = np.eye(2)
        with default_dtype(np.float64):
            loss = contrastive_loss(e, e, LossConfig(temperature=1.0)).item()

        assert abs(loss - 2 * (math.log(2) - 1)) < 1e-6

    def test_matches_naive_loop(self):
        """Test the vectorized loss equals the double loop for N in 2..8."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import LossConfig, contrastive_loss

        cfg = LossConfig(temperature=0.5)
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 9))
            z_a, z_b = rng.normal(size=(n, 5)), rng.normal(size=(n, 5))
            with default_dtype(np.float64):
                loss = contrastive_loss(z_a, z_b, cfg).item()
            worst = max(worst, abs(loss - _naive_loss(z_a, z_b, 0.5)))

        assert worst < 1e-6

    def test_swapping_views(self, rng):
        """Test exchanging view a and view b leaves the loss unchanged."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import contrastive_loss

        z_a, z_b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        with default_dtype(np.float64):
            forward = contrastive_loss(z_a, z_b).item()
            swapped = contrastive_loss(z_b, z_a).item()

        assert forward == pytest.approx(swapped, abs=1e-9)

    def test_scale_invariance(self, rng):
        """Test rescaling rows does not change the loss."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import contrastive_loss

        z_a, z_b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        scales = rng.uniform(0.1, 10.0, size=(4, 1))
        with default_dtype(np.float64):
            base = contrastive_loss(z_a, z_b).item()
            scaled = contrastive_loss(z_a * scales, z_b).item()

        assert base == pytest.approx(scaled, abs=1e-9)

    def test_pair_permutation(self, rng):
        """Test reordering the pairs together leaves the loss unchanged."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import contrastive_loss

        z_a, z_b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        order = rng.permutation(5)
        with default_dtype(np.float64):
            base = contrastive_loss(z_a, z_b).item()
            permuted = contrastive_loss(z_a[order], z_b[order]).item()

        assert base == pytest.approx(permuted, abs=1e-9)

    def test_mean_reduction(self, rng):
        """Test mean divides the summed loss by N."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import LossConfig, contrastive_loss

        z_a, z_b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        with default_dtype(np.float64):
            total = contrastive_loss(z_a, z_b, LossConfig(reduction="sum")).item()
            mean = contrastive_loss(z_a, z_b, LossConfig(reduction="mean")).item()

        assert mean == pytest.approx(total / 4, abs=1e-9)

    def test_standard_variant_orthonormal(self):
        """Test the 2N-anchor formulation on two orthonormal pairs."""
        from src.core.tensor import default_dtype
        from src.services.contrastive import LossConfig, contrastive_loss

        e = np.eye(2)
        with default_dtype(np.float64):
            loss = contrastive_loss(e, e, LossConfig(temperature=1.0, variant="standard")).item()

        # each of 4 anchors: positive e^1 against e^1 + 2 e^0
        expected = -4 * math.log(math.e / (math.e + 2))
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_single_pair_rejected(self):
        """Test N=1 has no negatives and is rejected."""
        from src.core.errors import LossError
        from src.services.contrastive import contrastive_loss

        with pytest.raises(LossError, match="N=1"):
            contrastive_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_shape_mismatch(self):
        """Test view shapes must agree."""
        from src.core.errors import LossError
        from src.services.contrastive import contrastive_loss

        with pytest.raises(LossError):
            contrastive_loss(np.ones((3, 4)), np.ones((3, 5)))

    def test_invalid_temperature(self):
        """Test non-positive temperatures fail validation."""
        from pydantic import ValidationError

        from src.services.contrastive import LossConfig

        with pytest.raises(ValidationError):
            LossConfig(temperature=0.0)

    @pytest.mark.parametrize("variant", ["negatives_only", "standard"])
    def test_gradients(self, variant):
        """Test loss gradients against finite differences."""
        from src.core.gradcheck import gradcheck
        from src.services.contrastive import LossConfig, contrastive_loss

        cfg = LossConfig(temperature=0.5, variant=variant)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            inputs = [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]
            result = gradcheck(lambda a, b: contrastive_loss(a, b, cfg), inputs)
            assert result.passed()


class TestTraining:
    """Tests for the two training phases."""

    def test_zero_epochs(self, tiny_model, small_images):
        """Test zero epochs leave the model untouched and log nothing."""
        from src.services.training import train_phase_a

        before = tiny_model.fingerprint()
        log = train_phase_a(tiny_model, small_images, epochs=0)

        assert len(log) == 0
        assert tiny_model.fingerprint() == before

    def test_phase_a_leaves_classifier(self, tiny_model, small_images):
        """Test phase (a) updates the encoder but not the classifier."""
        from src.services.training import train_phase_a

        encoder = tiny_model.fingerprint(("encoder",))
        classifier = tiny_model.fingerprint(("classifier",))
        log = train_phase_a(tiny_model, small_images, epochs=2, batch=4)

        assert len(log) == 2
        assert all(np.isfinite(log.losses))
        assert tiny_model.fingerprint(("encoder",)) != encoder
        assert tiny_model.fingerprint(("classifier",)) == classifier
        assert tiny_model.phase == "phase_a"

    def test_phase_a_needs_two_images(self, tiny_model, small_images):
        """Test a single image cannot form a contrastive batch."""
        from src.core.errors import TrainingError
        from src.services.training import train_phase_a

        with pytest.raises(TrainingError):
            train_phase_a(tiny_model, small_images[:1], epochs=1)

    def test_phase_b_freezes_encoder(self, tiny_model, blobs):
        """Test phase (b) changes only the classifier."""
        from src.services.training import train_phase_b

        frozen = tiny_model.fingerprint(("encoder", "projection_head"))
        classifier = tiny_model.fingerprint(("classifier",))
        log = train_phase_b(tiny_model, blobs, epochs=3, batch=16)

        assert len(log) == 3
        assert tiny_model.fingerprint(("encoder", "projection_head")) == frozen
        assert tiny_model.fingerprint(("classifier",)) != classifier

    def test_phase_b_reduces_loss(self, tiny_model, blobs):
        """Test cross-entropy falls while fitting the classifier."""
        from src.services.training import OptimizerConfig, train_phase_b

        log = train_phase_b(tiny_model, blobs, epochs=15, batch=8, optimizer_cfg=OptimizerConfig(kind="adam", lr=1e-2))

        assert log.losses[-1] < log.losses[0]

    def test_phase_b_needs_labels(self, tiny_model, blobs):
        """Test unlabeled data is rejected."""
        from src.core.errors import TrainingError
        from src.services.training import train_phase_b

        with pytest.raises(TrainingError, match="labeled"):
            train_phase_b(tiny_model, blobs.without_labels(), epochs=1)

    def test_train_log_csv(self):
        """Test the CSV layout with and without timing."""
        from src.services.training import EpochRecord, TrainLog

        log = TrainLog("phase_a", [EpochRecord(1, 2.5, 10.0), EpochRecord(2, 2.25, 11.5)])

        assert log.to_csv(include_timing=False) == "epoch,mean_loss\n1,2.5\n2,2.25\n"
        assert log.to_csv().splitlines()[1] == "1,2.5,10.000"
