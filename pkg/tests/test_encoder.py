import dataclasses
import random
import tempfile
import unittest
from pathlib import Path

import torch

from zsad.adapters.encoders import MockEncoder, build_encoder
from zsad.config.run_config import backbone_preset
from zsad.core.errors import AssetError, InputError
from zsad.core.models import Provenance, TokenEmbeddingSequence

_VOCAB = [
    "object", "damaged", "flawless", "capsule", "photo", "cropped", "bottle", "scratch",
    "metal", "nut", "crack", "perfect", "broken", "defect", "close", "up", "bright", "dark",
]


def _mock(**overrides) -> MockEncoder:
    cfg = dataclasses.replace(backbone_preset("mock"), **overrides)
    return MockEncoder(cfg, seed=0)


def _random_images(n: int, res: int = 224, seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, 3, res, res, generator=gen)


class EncoderGeometryTests(unittest.TestCase):
    def test_default_backbone_grid_is_37_by_37(self) -> None:
        cfg = backbone_preset("tips-l14-hr")
        self.assertEqual(cfg.input_resolution, 518)
        self.assertEqual(cfg.grid_size, 37)
        self.assertEqual(cfg.grid_size ** 2, 1369)

    def test_mock_features_have_expected_shapes(self) -> None:
        enc = _mock()
        feats = enc.encode_image(_random_images(1)[0])
        self.assertEqual(feats.grid_shape, (16, 16))
        self.assertEqual(tuple(feats.patch_features.shape), (256, 64))
        self.assertEqual(tuple(feats.object_token.shape), (64,))
        self.assertEqual(tuple(feats.spatial_token.shape), (64,))

    def test_zero_image_gives_identical_patch_rows(self) -> None:
        enc = _mock()
        feats = enc.encode_image(torch.zeros(3, 224, 224))
        first = feats.patch_features[0]
        self.assertTrue(all(torch.equal(row, first) for row in feats.patch_features))

    def test_multi_layer_features_are_the_mean_of_each_layer(self) -> None:
        image = _random_images(1)[0]
        both = _mock(patch_layers=(18, 24)).encode_image(image).patch_features
        l18 = _mock(patch_layers=(18,)).encode_image(image).patch_features
        l24 = _mock(patch_layers=(24,)).encode_image(image).patch_features
        torch.testing.assert_close(both, (l18 + l24) / 2, rtol=1e-5, atol=1e-6)

    def test_patch_count_ignores_layer_selection(self) -> None:
        image = _random_images(1)[0]
        for layers in [(24,), (12, 24), (6, 12, 18, 24)]:
            feats = _mock(patch_layers=layers).encode_image(image)
            self.assertEqual(feats.patch_features.shape[0], 256)

    def test_wrong_resolution_is_an_input_error(self) -> None:
        with self.assertRaises(InputError):
            _mock().encode_image(torch.zeros(3, 200, 200))

    def test_non_finite_image_is_an_input_error(self) -> None:
        image = torch.zeros(3, 224, 224)
        image[0, 0, 0] = float("nan")
        with self.assertRaises(InputError):
            _mock().encode_image(image)

    def test_batched_and_single_encoding_agree(self) -> None:
        enc = _mock()
        images = _random_images(3)
        batch = enc.encode_batch(images)
        single = enc.encode_image(images[1])
        torch.testing.assert_close(batch.select(1).patch_features, single.patch_features)
        torch.testing.assert_close(batch.select(1).object_token, single.object_token)

    def test_encoding_is_deterministic(self) -> None:
        image = _random_images(1, seed=3)[0]
        a = _mock().encode_image(image)
        b = _mock().encode_image(image)
        self.assertTrue(torch.equal(a.patch_features, b.patch_features))
        self.assertTrue(torch.equal(a.object_token, b.object_token))
        self.assertTrue(torch.equal(a.spatial_token, b.spatial_token))


class TextEncoderTests(unittest.TestCase):
    def setUp(self) -> None:
        self.enc = _mock()

    def test_text_embedding_is_unit_norm(self) -> None:
        emb = self.enc.encode_text("a cropped photo of a flawless capsule")
        self.assertTrue(emb.normalized)
        self.assertAlmostEqual(float(emb.vector.norm()), 1.0, delta=1e-6)

    def test_identical_strings_give_identical_vectors(self) -> None:
        a = self.enc.encode_text("a photo of the bottle").vector
        b = self.enc.encode_text("a photo of the bottle").vector
        self.assertTrue(torch.equal(a, b))

    def test_distinct_strings_are_not_parallel(self) -> None:
        a = self.enc.encode_text("flawless capsule").vector
        b = self.enc.encode_text("damaged capsule").vector
        self.assertLess(float(a @ b), 1.0 - 1e-6)

    def test_empty_prompt_is_an_input_error(self) -> None:
        with self.assertRaises(InputError):
            self.enc.encode_text("   ")

    def test_word_lookup_is_deterministic_and_distinct(self) -> None:
        obj = self.enc.lookup_word_embedding("object")
        self.assertEqual(tuple(obj.shape), (1, 64))
        self.assertTrue(torch.equal(obj, self.enc.lookup_word_embedding("object")))
        self.assertFalse(torch.equal(obj, self.enc.lookup_word_embedding("damaged")))

    def test_token_sequence_of_word_rows_matches_text_entry_point(self) -> None:
        rows = self.enc.lookup_word_embedding("object")
        seq = TokenEmbeddingSequence(tokens=rows, provenance=(Provenance.WORD,))
        torch.testing.assert_close(
            self.enc.encode_token_sequence(seq).vector,
            self.enc.encode_text("object").vector,
            rtol=0,
            atol=1e-6,
        )

    def test_text_and_token_entry_points_agree_on_random_strings(self) -> None:
        rnd = random.Random(7)
        for _ in range(50):
            words = [rnd.choice(_VOCAB) for _ in range(rnd.randint(1, 8))]
            rows = torch.cat([self.enc.lookup_word_embedding(w) for w in words])
            seq = TokenEmbeddingSequence(tokens=rows, provenance=(Provenance.WORD,) * rows.shape[0])
            torch.testing.assert_close(
                self.enc.encode_token_sequence(seq).vector,
                self.enc.encode_text(" ".join(words)).vector,
                rtol=0,
                atol=1e-6,
            )

    def test_scaling_a_learned_row_changes_the_embedding(self) -> None:
        gen = torch.Generator().manual_seed(1)
        learned = torch.randn(8, 64, generator=gen) * 0.02
        word = self.enc.lookup_word_embedding("object")
        prov = (Provenance.LEARNED,) * 8 + (Provenance.WORD,)
        base = self.enc.encode_token_sequence(TokenEmbeddingSequence(torch.cat([learned, word]), prov))
        scaled = learned.clone()
        scaled[0] *= 2.0
        other = self.enc.encode_token_sequence(TokenEmbeddingSequence(torch.cat([scaled, word]), prov))
        self.assertEqual(base.vector.shape, other.vector.shape)
        self.assertFalse(torch.allclose(base.vector, other.vector))

    def test_eight_learned_rows_plus_one_word_is_length_nine(self) -> None:
        rows = torch.cat([torch.zeros(8, 64), self.enc.lookup_word_embedding("object")])
        seq = TokenEmbeddingSequence(rows, (Provenance.LEARNED,) * 8 + (Provenance.WORD,))
        self.assertEqual(seq.length, 9)
        self.assertAlmostEqual(float(self.enc.encode_token_sequence(seq).vector.norm()), 1.0, delta=1e-6)

    def test_context_overflow_is_an_input_error(self) -> None:
        limit = self.enc.config.context_length
        seq = TokenEmbeddingSequence(torch.zeros(limit + 1, 64), (Provenance.LEARNED,) * (limit + 1))
        with self.assertRaises(InputError):
            self.enc.encode_token_sequence(seq)

    def test_non_finite_rows_are_an_input_error(self) -> None:
        rows = torch.zeros(2, 64)
        rows[1, 3] = float("inf")
        with self.assertRaises(InputError):
            self.enc.encode_token_sequence(TokenEmbeddingSequence(rows, (Provenance.LEARNED,) * 2))

    def test_token_sequence_is_differentiable_in_learned_rows(self) -> None:
        learned = torch.zeros(4, 64, requires_grad=True)
        rows = torch.cat([learned + 0.01, self.enc.lookup_word_embedding("object")])
        seq = TokenEmbeddingSequence(rows, (Provenance.LEARNED,) * 4 + (Provenance.WORD,))
        vec = self.enc.encode_token_sequence(seq).vector
        vec[0].backward()
        self.assertIsNotNone(learned.grad)
        self.assertGreater(float(learned.grad.abs().sum()), 0.0)


class EncoderFactoryTests(unittest.TestCase):
    def test_mock_name_builds_mock_encoder(self) -> None:
        self.assertIsInstance(build_encoder(backbone_preset("mock")), MockEncoder)

    def test_real_backbone_without_weights_is_an_asset_error(self) -> None:
        cfg = dataclasses.replace(backbone_preset("clip-vit-l14"), weights_path="/nonexistent/weights.bin")
        with self.assertRaises(AssetError) as ctx:
            build_encoder(cfg)
        self.assertIn("/nonexistent/weights.bin", str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 3)

    def test_tips_presets_are_refused_even_with_weights(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            weights = Path(tmp) / "tips.pt"
            weights.write_bytes(b"\0")
            cfg = dataclasses.replace(backbone_preset("tips-l14-hr"), weights_path=str(weights))
            with self.assertRaises(AssetError) as ctx:
                build_encoder(cfg)
        self.assertIn("no TIPS adapter", str(ctx.exception))


if __name__ == "__main__":
    unittest.main()
