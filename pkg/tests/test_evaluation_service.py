import dataclasses
import tempfile
import unittest
from pathlib import Path

import torch

from zsad.adapters.datasets.preprocess import Preprocessor
from zsad.adapters.datasets.synthetic import generate_synthetic_dataset
from zsad.adapters.datasets.torch_dataset import ManifestDataset
from zsad.adapters.encoders import MockEncoder
from zsad.config.run_config import backbone_preset
from zsad.core.errors import ValidationError
from zsad.core.models import (
    EvalConfig,
    LossMode,
    PromptingMode,
    PromptSource,
    Strategy,
    TextPrototypes,
    TrainConfig,
)
from zsad.io.checkpoint import PromptCheckpoint
from zsad.io.output_writer import write_report_json
from zsad.services.evaluation_service import EvaluationService, class_name_for, run_evaluation
from zsad.services.prompt_service import init_learnable_prompts
from zsad.services.training_service import TrainingService


def _encoder() -> MockEncoder:
    return MockEncoder(backbone_preset("mock"), seed=0)


def _checkpoint(encoder: MockEncoder, pre: Preprocessor, train_manifest: str = "synthetic-train") -> PromptCheckpoint:
    state = init_learnable_prompts(8, encoder.config.text_token_dim, 111)
    return PromptCheckpoint(
        state,
        {"train_manifest": train_manifest, "preprocess_fingerprint": pre.fingerprint()},
    )


class EvaluationServiceTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.encoder = _encoder()
        self.pre = Preprocessor.from_backbone(self.encoder.config)
        self.manifest = generate_synthetic_dataset(
            self.tmp / "test", 3, 3, image_size=32, seed=5, name="synthetic-test"
        )
        self.ckpt = _checkpoint(self.encoder, self.pre)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_full_annotation_reports_both_blocks(self) -> None:
        report = run_evaluation(self.manifest, self.encoder, None, self.ckpt, EvalConfig())
        cat = report.per_category["synthetic"]
        self.assertEqual(cat.n_samples, 6)
        self.assertEqual(cat.n_anomalous, 3)
        self.assertIsNotNone(cat.image)
        self.assertIsNotNone(cat.pixel)
        self.assertIsNotNone(report.mean_image)
        self.assertIsNotNone(report.mean_pixel)
        self.assertEqual(report.metadata["manifest"], "synthetic-test")
        self.assertEqual(report.metadata["strategy"], "S5")
        self.assertEqual(report.metadata["lexicon"], "generic")

    def test_pixel_only_manifest_has_no_image_block(self) -> None:
        manifest = dataclasses.replace(self.manifest, annotation_level="pixel_only")
        report = run_evaluation(manifest, self.encoder, None, self.ckpt, EvalConfig())
        cat = report.per_category["synthetic"]
        self.assertIsNone(cat.image)
        self.assertIsNotNone(cat.pixel)
        self.assertIsNone(report.mean_image)

    def test_image_only_manifest_has_no_pixel_block(self) -> None:
        manifest = dataclasses.replace(self.manifest, annotation_level="image_only")
        report = run_evaluation(manifest, self.encoder, None, self.ckpt, EvalConfig())
        cat = report.per_category["synthetic"]
        self.assertIsNotNone(cat.image)
        self.assertIsNone(cat.pixel)
        self.assertIsNone(report.mean_pixel)

    def test_training_manifest_is_refused_unless_overridden(self) -> None:
        ckpt = _checkpoint(self.encoder, self.pre, train_manifest="synthetic-test")
        with self.assertRaises(ValidationError) as ctx:
            run_evaluation(self.manifest, self.encoder, None, ckpt, EvalConfig())
        self.assertIn("synthetic-test", str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 2)

        report = run_evaluation(self.manifest, self.encoder, None, ckpt, EvalConfig(override_same_domain=True))
        self.assertIn("synthetic", report.per_category)

    def test_preprocessing_fingerprint_mismatch_is_refused(self) -> None:
        ckpt = PromptCheckpoint(self.ckpt.state, {"train_manifest": "x", "preprocess_fingerprint": "deadbeef"})
        with self.assertRaises(ValidationError) as ctx:
            run_evaluation(self.manifest, self.encoder, None, ckpt, EvalConfig())
        self.assertIn("fingerprint", str(ctx.exception))

    def test_report_json_is_byte_identical_across_runs(self) -> None:
        a = run_evaluation(self.manifest, self.encoder, None, self.ckpt, EvalConfig())
        b = run_evaluation(self.manifest, self.encoder, None, self.ckpt, EvalConfig())
        pa = write_report_json(a, self.tmp / "a")
        pb = write_report_json(b, self.tmp / "b")
        self.assertEqual(Path(pa).read_bytes(), Path(pb).read_bytes())

    def test_medical_domain_selects_medical_lexicon(self) -> None:
        manifest = dataclasses.replace(self.manifest, domain_tag="medical")
        report = run_evaluation(manifest, self.encoder, None, self.ckpt, EvalConfig())
        self.assertEqual(report.metadata["lexicon"], "medical")
        report = run_evaluation(manifest, self.encoder, None, self.ckpt, EvalConfig(lexicon="generic"))
        self.assertEqual(report.metadata["lexicon"], "generic")

    def test_sink_and_progress_see_every_sample(self) -> None:
        seen = []
        events = []
        run_evaluation(
            self.manifest,
            self.encoder,
            None,
            self.ckpt,
            EvalConfig(),
            on_progress=lambda e, d: events.append(e),
            sink=lambda sample, result: seen.append((sample.id, tuple(result.anomaly_map.values.shape))),
        )
        self.assertEqual(len(seen), 6)
        self.assertTrue(all(shape == (224, 224) for _, shape in seen))
        self.assertEqual(events[0], "start")
        self.assertEqual(events[-1], "done")
        self.assertEqual(events.count("sample"), 6)

    def test_failing_progress_callback_does_not_abort(self) -> None:
        def boom(event, data):
            raise RuntimeError("ui gone")

        report = run_evaluation(self.manifest, self.encoder, None, self.ckpt, EvalConfig(), on_progress=boom)
        self.assertIn("synthetic", report.per_category)

    def test_declared_category_without_samples_is_flagged(self) -> None:
        manifest = dataclasses.replace(self.manifest, categories=("synthetic", "empty_cat"))
        report = run_evaluation(manifest, self.encoder, None, self.ckpt, EvalConfig())
        empty = report.per_category["empty_cat"]
        self.assertEqual(empty.n_samples, 0)
        self.assertIsNone(empty.image.auroc)
        self.assertIsNone(empty.pixel.auroc)
        self.assertIn("empty_cat: image metrics undefined: no samples", report.flags)
        self.assertIn("empty_cat: pixel metrics undefined: no samples", report.flags)
        self.assertEqual(report.mean_pixel, report.per_category["synthetic"].pixel)

    def test_strategies_other_than_s5_run(self) -> None:
        for strategy in (Strategy.S1, Strategy.S2, Strategy.S3, Strategy.S4):
            report = run_evaluation(self.manifest, self.encoder, None, self.ckpt, EvalConfig(strategy=strategy))
            self.assertEqual(report.metadata["strategy"], strategy.value)


class RoutingTests(unittest.TestCase):
    def setUp(self) -> None:
        self.G_f = TextPrototypes(torch.ones(4), torch.zeros(4), PromptSource.FIXED)
        self.G_l = TextPrototypes(torch.zeros(4), torch.ones(4), PromptSource.LEARNABLE)

    def test_decoupled(self) -> None:
        score, amap = EvaluationService.route(PromptingMode.DECOUPLED, self.G_f, self.G_l)
        self.assertIs(score, self.G_f)
        self.assertIs(amap, self.G_l)

    def test_fixed_and_learned(self) -> None:
        for mode, expected in (("fixed", self.G_f), ("learned", self.G_l)):
            score, amap = EvaluationService.route(mode, self.G_f, self.G_l)
            self.assertIs(score, expected)
            self.assertIs(amap, expected)

    def test_class_name_for_category(self) -> None:
        self.assertEqual(class_name_for("metal_nut"), "metal nut")
        self.assertEqual(class_name_for("_"), "object")


class SyntheticEndToEndTests(unittest.TestCase):
    """Train on one synthetic split, evaluate on a held-out one."""

    @classmethod
    def setUpClass(cls) -> None:
        torch.manual_seed(111)
        encoder = _encoder()
        pre = Preprocessor.from_backbone(encoder.config)
        with tempfile.TemporaryDirectory() as tmp:
            train = generate_synthetic_dataset(
                Path(tmp) / "train", 40, 40, image_size=128, seed=111, name="synthetic-train"
            )
            test = generate_synthetic_dataset(
                Path(tmp) / "test", 20, 20, image_size=128, seed=222, name="synthetic-test"
            )
            meta = {"train_manifest": train.name, "preprocess_fingerprint": pre.fingerprint()}
            cfg = EvalConfig(strategy=Strategy.S5)

            cls.reports = {}
            cls.logs = {}
            for mode, hide_labels in ((LossMode.LOCAL, True), (LossMode.GLOBAL, False)):
                train_cfg = TrainConfig(epochs=2, batch_size=8, seed=111, loss_mode=mode)
                state = init_learnable_prompts(train_cfg.n_tokens, encoder.config.text_token_dim, train_cfg.seed)
                trained, log = TrainingService(encoder).train(
                    ManifestDataset(train, pre, hide_labels=hide_labels), state, train_cfg
                )
                cls.logs[mode] = log
                cls.reports[mode] = run_evaluation(test, encoder, None, PromptCheckpoint(trained, meta), cfg)

            untrained = init_learnable_prompts(8, encoder.config.text_token_dim, 111)
            cls.reports["untrained"] = run_evaluation(test, encoder, None, PromptCheckpoint(untrained, meta), cfg)

    def test_learned_prompts_localize_synthetic_rectangles(self) -> None:
        self.assertEqual(len(self.logs[LossMode.LOCAL]), 20)
        report = self.reports[LossMode.LOCAL]
        self.assertGreaterEqual(report.mean_pixel.auroc, 0.95)
        self.assertGreaterEqual(report.mean_image.auroc, 0.90)

    def test_training_improves_on_the_initial_prompts(self) -> None:
        self.assertGreater(
            self.reports[LossMode.LOCAL].mean_pixel.auroc, self.reports["untrained"].mean_pixel.auroc
        )

    def test_global_training_localizes_worse_than_local_training(self) -> None:
        self.assertEqual(len(self.logs[LossMode.GLOBAL]), 20)
        self.assertLess(
            self.reports[LossMode.GLOBAL].mean_pixel.auroc, self.reports[LossMode.LOCAL].mean_pixel.auroc
        )


if __name__ == "__main__":
    unittest.main()
