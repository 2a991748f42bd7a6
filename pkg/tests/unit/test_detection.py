"""
Unit Tests for Detection and Recovery
"""

import numpy as np
import pytest


@pytest.fixture
def reference(tiny_model, small_images):
    """Reference profile from a handful of 4-image batches."""
    from src.services.detector import DetectConfig, build_reference

    return build_reference(tiny_model, small_images, DetectConfig(n_samples=5, batch=4, seed=3, workers=2))


class TestReference:
    """Tests for build_reference and loss sampling."""

    def test_single_sample_has_zero_spread(self, tiny_model, small_images):
        """Test one sample gives sigma_c = 0 and an invalid profile."""
        from src.services.detector import DetectConfig, build_reference

        profile = build_reference(tiny_model, small_images, DetectConfig(n_samples=1, batch=4))

        assert profile.sigma_c == 0.0
        assert profile.is_valid is False

    def test_profile_records_configs(self, reference):
        """Test the profile carries the configs and their hashes."""
        from src.config import config_hash

        assert reference.n_samples == 5
        assert reference.batch == 4
        assert reference.loss_cfg_hash == config_hash(reference.loss_cfg)
        assert reference.aug_cfg_hash == config_hash(reference.aug_cfg)

    def test_profile_round_trip(self, reference):
        """Test to_dict and from_dict preserve the profile."""
        from src.services.detector import ReferenceProfile

        assert ReferenceProfile.from_dict(reference.to_dict()) == reference

    def test_samples_independent_of_workers(self, tiny_model, small_images):
        """Test the worker count does not change sampled losses."""
        from src.services.augmentation import AugmentationConfig
        from src.services.contrastive import LossConfig
        from src.services.detector import loss_samples

        args = (tiny_model, small_images, 6, 4, AugmentationConfig(seed=2), LossConfig(), 9)
        serial = loss_samples(*args, workers=1)
        parallel = loss_samples(*args, workers=3)

        np.testing.assert_array_equal(serial, parallel)
        assert len(set(serial.tolist())) > 1

    def test_sampling_leaves_parameters(self, tiny_model, small_images):
        """Test detection never changes the model."""
        from src.services.augmentation import AugmentationConfig
        from src.services.contrastive import LossConfig
        from src.services.detector import sample_loss

        before = tiny_model.fingerprint()
        sample_loss(tiny_model, small_images, AugmentationConfig(), LossConfig())

        assert tiny_model.fingerprint() == before

    def test_pool_smaller_than_batch(self, tiny_model, small_images):
        """Test a pool that cannot fill one batch is rejected."""
        from src.core.errors import DetectionError
        from src.services.augmentation import AugmentationConfig
        from src.services.contrastive import LossConfig
        from src.services.detector import loss_samples

        with pytest.raises(DetectionError):
            loss_samples(tiny_model, small_images, 1, 16, AugmentationConfig(), LossConfig(), 0)

    def test_inference_shares_encoder_pass(self, tiny_model, small_images):
        """Test the detection pass also returns classifier predictions."""
        from src.models.network import predict
        from src.services.augmentation import AugmentationConfig
        from src.services.contrastive import LossConfig
        from src.services.detector import detect_with_inference

        result = detect_with_inference(tiny_model, small_images, AugmentationConfig.identity(), LossConfig())

        np.testing.assert_array_equal(result.predictions, predict(tiny_model, small_images))
        assert np.isfinite(result.loss)


class TestVerdict:
    """Tests for detect and DetectionVerdict."""

    def test_decision_rule(self):
        """Test attacked is a strict comparison against delta."""
        from src.services.detector import DetectionVerdict

        assert DetectionVerdict.decide(1.75, 1.0, 0.5, 1).attacked is True
        assert DetectionVerdict.decide(1.5, 1.0, 0.5, 1).attacked is False
        assert DetectionVerdict.decide(0.25, 1.0, 0.5, 1).attacked is True

    def test_inconsistent_verdict(self):
        """Test a verdict whose flag contradicts its numbers is invalid."""
        from pydantic import ValidationError

        from src.services.detector import DetectionVerdict

        with pytest.raises(ValidationError):
            DetectionVerdict(l_d=5.0, l_c=1.0, delta=0.5, attacked=False, batches_used=1)

    def test_default_delta(self, reference):
        """Test the default tolerance is max(3 sigma_c, 5% of |l_c|)."""
        profile = reference.model_copy(update={"l_c": 2.0, "sigma_c": 0.1})

        assert profile.default_delta() == pytest.approx(0.3)
        assert profile.model_copy(update={"sigma_c": 0.0}).default_delta() == pytest.approx(0.1)

    def test_clean_model_with_reference_seed(self, tiny_model, small_images, reference):
        """Test replaying the reference's own batches does not flag the clean model."""
        from src.services.detector import detect

        verdict = detect(reference, tiny_model, small_images, n_batches=5, seed=reference.seed)

        assert verdict.l_d == pytest.approx(reference.l_c, rel=1e-9)
        assert verdict.attacked is False
        assert verdict.batches_used == 5

    def test_tiny_delta_flags_any_change(self, tiny_model, small_images, reference):
        """Test a model with a destroyed encoder is flagged."""
        from src.services.detector import detect

        attacked = tiny_model.clone()
        layer = attacked.layer("encoder.conv1")
        layer.weight.assign(-layer.weight.data * 50.0)
        verdict = detect(reference, attacked, small_images, delta=1e-6, n_batches=5, seed=reference.seed)

        assert verdict.attacked is True

    @pytest.mark.parametrize("delta", [0.0, -1.0])
    def test_non_positive_delta(self, tiny_model, small_images, reference, delta):
        """Test delta must be positive."""
        from src.core.errors import DetectionError
        from src.services.detector import detect

        with pytest.raises(DetectionError, match="delta"):
            detect(reference, tiny_model, small_images, delta=delta)

    def test_zero_batches(self, tiny_model, small_images, reference):
        """Test n_batches must be at least 1."""
        from src.core.errors import DetectionError
        from src.services.detector import detect

        with pytest.raises(DetectionError, match="n_batches"):
            detect(reference, tiny_model, small_images, n_batches=0)


class TestStopCriteria:
    """Tests for stop_reason_for."""

    def test_no_losses(self):
        from src.services.recovery import stop_reason_for

        assert stop_reason_for([], 1.0, 0.0, 3, 1e-3, 10) is None

    def test_reference_reached(self):
        """Test reaching the reference within tolerance stops first."""
        from src.services.recovery import stop_reason_for

        assert stop_reason_for([3.0, 2.05], 2.0, 0.1, 3, 1e-3, 2) == "reference_reached"
        assert stop_reason_for([3.0, 2.05], 2.0, 0.0, 3, 1e-3, 10) is None

    def test_plateau(self):
        """Test patience consecutive stalled epochs stop the phase."""
        from src.services.recovery import stop_reason_for

        stalled = [2.0, 1.0, 1.0, 1.0, 1.0]
        improving = [2.0, 1.0, 1.0, 1.0, 0.5]

        assert stop_reason_for(stalled, None, 0.0, 3, 1e-3, 10) == "plateau"
        assert stop_reason_for(improving, None, 0.0, 3, 1e-3, 10) is None

    def test_epoch_cap(self):
        """Test the cap stops the phase when nothing else does."""
        from src.services.recovery import stop_reason_for

        assert stop_reason_for([3.0, 2.0], None, 0.0, 3, 1e-3, 2) == "epoch_cap"
        assert stop_reason_for([3.0], None, 0.0, 3, 1e-3, 2) is None


class TestRecovery:
    """Tests for recover and detect_and_recover."""

    def test_unlabeled_recovery(self, tiny_model, blobs):
        """Test phase (a) alone runs up to the epoch cap."""
        from src.services.recovery import RecoveryConfig, recover

        cfg = RecoveryConfig(batch=8, data_budget=16, epoch_cap=2)
        report = recover(tiny_model, blobs, cfg, evaluation=blobs)

        assert report.phase_a_epochs == 2
        assert report.phase_a_stop == "epoch_cap"
        assert report.phase_b_run is False
        assert report.phase_b_epochs == 0
        assert report.epochs_used == 2
        assert report.acc_after == report.acc_after_phase_a
        assert [row[0] for row in report.trajectory_rows()] == ["phase_a", "phase_a"]

    def test_labeled_recovery(self, tiny_model, blobs):
        """Test phase (b) runs after phase (a) when labels are allowed."""
        from src.services.recovery import RecoveryConfig, recover

        cfg = RecoveryConfig(labeled=True, batch=8, data_budget=16, epoch_cap=2)
        report = recover(tiny_model, blobs, cfg, evaluation=blobs)

        assert report.phase_b_run is True
        assert report.phase_b_epochs >= 1
        assert report.epochs_used == report.phase_a_epochs + report.phase_b_epochs
        assert report.stop_reason == report.phase_b_stop
        assert tiny_model.phase == "recovered_phase_b"

    def test_clean_model_reaches_reference_in_one_epoch(self, tiny_model, blobs):
        """Test a clean model meets its own l_c on the first epoch."""
        from src.services.detector import DetectConfig, build_reference
        from src.services.recovery import RecoveryConfig, recover

        profile = build_reference(tiny_model, blobs, DetectConfig(n_samples=10, batch=8, seed=5, workers=2))
        cfg = RecoveryConfig(
            batch=8,
            data_budget=40,
            epoch_cap=5,
            reference_contrastive=profile.l_c,
            reference_tolerance=profile.default_delta(),
        )
        report = recover(tiny_model, blobs.without_labels(), cfg)

        assert report.phase_a_epochs == 1
        assert report.epochs_used == 1
        assert report.stop_reason == "reference_reached"
        assert report.phase_a_losses[0] <= profile.l_c + profile.default_delta()
        assert report.acc_before is None

    def test_detection_passes_reference_to_recovery(self, tiny_model, small_images, blobs, reference, monkeypatch):
        """Test recovery after a positive verdict stops against l_c and the verdict's delta."""
        from src.services import recovery
        from src.services.detector import DetectConfig

        seen = {}

        def fake_recover(model, data, cfg, evaluation=None, attacked_layers=None):
            seen["cfg"] = cfg
            return "report"

        monkeypatch.setattr(recovery, "recover", fake_recover)
        verdict, report = recovery.detect_and_recover(
            tiny_model,
            small_images,
            blobs,
            reference,
            delta=1e-12,
            cfg=recovery.RecoveryConfig(batch=8, data_budget=16),
            detect_cfg=DetectConfig(n_batches=3, seed=reference.seed + 1),
        )

        assert verdict.attacked is True
        assert report == "report"
        assert seen["cfg"].reference_contrastive == reference.l_c
        assert seen["cfg"].reference_tolerance == verdict.delta == 1e-12
        assert seen["cfg"].batch == 8

    def test_explicit_reference_is_kept(self, tiny_model, small_images, blobs, reference, monkeypatch):
        from src.services import recovery
        from src.services.detector import DetectConfig

        seen = {}

        def fake_recover(model, data, cfg, evaluation=None, attacked_layers=None):
            seen["cfg"] = cfg

        monkeypatch.setattr(recovery, "recover", fake_recover)
        recovery.detect_and_recover(
            tiny_model,
            small_images,
            blobs,
            reference,
            delta=1e-12,
            cfg=recovery.RecoveryConfig(batch=8, data_budget=16, reference_contrastive=2.5),
            detect_cfg=DetectConfig(n_batches=3, seed=reference.seed + 1),
        )

        assert seen["cfg"].reference_contrastive == 2.5
        assert seen["cfg"].reference_tolerance == 0.0

    def test_classifier_attack_out_of_scope_without_labels(self, tiny_model, blobs):
        """Test unlabeled recovery flags a classifier-only attack and leaves the classifier as attacked."""
        from src.attacks.gda import GdaConfig, gda_attack
        from src.services.recovery import RecoveryConfig, recover

        gda_attack(tiny_model, blobs.as_float()[:10], GdaConfig(target_class=7, lr=1.0, max_iters=200))
        attacked = tiny_model.fingerprint(("classifier",))
        cfg = RecoveryConfig(batch=8, data_budget=16, epoch_cap=2)

        report = recover(tiny_model, blobs.without_labels(), cfg, attacked_layers=["classifier"])

        assert report.in_scope is False
        assert tiny_model.fingerprint(("classifier",)) == attacked

    def test_scope_flag(self, tiny_config, blobs):
        """Test in_scope for encoder, classifier and unknown attacks."""
        from src.models.network import build_model
        from src.services.recovery import RecoveryConfig, recover, retrains_any

        unlabeled = RecoveryConfig(batch=8, data_budget=16, epoch_cap=1)
        labeled = unlabeled.model_copy(update={"labeled": True})

        assert recover(build_model(tiny_config), blobs, unlabeled, attacked_layers=["encoder.conv2"]).in_scope
        assert recover(build_model(tiny_config), blobs, labeled, attacked_layers=["classifier"]).in_scope
        assert recover(build_model(tiny_config), blobs, unlabeled).in_scope is None
        assert retrains_any(["classifier", "projection_head.fc1"], labeled=False) is True
        assert retrains_any([], labeled=False) is False

    def test_labeled_needs_labels(self, tiny_model, blobs):
        """Test labeled recovery on unlabeled data is rejected."""
        from src.core.errors import RecoveryError
        from src.services.recovery import RecoveryConfig, recover

        with pytest.raises(RecoveryError, match="labels"):
            recover(tiny_model, blobs.without_labels(), RecoveryConfig(labeled=True, batch=8, data_budget=16))

    def test_budget_smaller_than_batch(self):
        """Test the data budget must cover one batch."""
        from pydantic import ValidationError

        from src.services.recovery import RecoveryConfig

        with pytest.raises(ValidationError):
            RecoveryConfig(batch=64, data_budget=32)

    def test_too_little_data(self, tiny_model, blobs):
        """Test fewer images than one batch is rejected."""
        from src.core.errors import RecoveryError
        from src.services.recovery import RecoveryConfig, recover

        with pytest.raises(RecoveryError):
            recover(tiny_model, blobs.subset(np.arange(4)), RecoveryConfig(batch=8, data_budget=16))

    def test_clean_model_skips_recovery(self, tiny_model, small_images, blobs, reference):
        """Test recovery is skipped when detection does not fire."""
        from src.services.detector import DetectConfig
        from src.services.recovery import detect_and_recover

        before = tiny_model.fingerprint()
        verdict, report = detect_and_recover(
            tiny_model,
            small_images,
            blobs,
            reference,
            detect_cfg=DetectConfig(n_batches=5, seed=reference.seed),
        )

        assert verdict.attacked is False
        assert report is None
        assert tiny_model.fingerprint() == before
