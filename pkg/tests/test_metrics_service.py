import unittest
from typing import List, Tuple

import numpy as np

from zsad.core.errors import InputError, ParameterError
from zsad.services.metrics_service import (
    CategoryScores,
    aggregate_report,
    aupro,
    auroc,
    average_precision,
    category_report,
    f1_max,
    label_regions,
    pro_curve,
)

_SCORES = [0.1, 0.4, 0.35, 0.8]
_LABELS = [0, 0, 1, 1]


# ---------- brute-force references ----------

def _pairwise_auroc(s: np.ndarray, y: np.ndarray) -> float:
    pos, neg = s[y == 1], s[y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def _threshold_ap(s: np.ndarray, y: np.ndarray) -> float:
    n_pos = int(y.sum())
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        tp = int((pred & (y == 1)).sum())
        precision = tp / int(pred.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def _threshold_f1(s: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    n_pos = int(y.sum())
    best, best_t = -1.0, None
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        tp = int((pred & (y == 1)).sum())
        fp = int((pred & (y == 0)).sum())
        f1 = 2 * tp / (tp + fp + n_pos)
        if f1 > best:
            best, best_t = f1, t
    return best, best_t


def _threshold_aupro(maps: List[np.ndarray], masks: List[np.ndarray], limit: float) -> float:
    regions = []
    for k, mask in enumerate(masks):
        labeled, n = label_regions(mask)
        regions.extend((k, labeled == i) for i in range(1, n + 1))
    normal = [~(m > 0.5) for m in masks]
    n_normal = sum(int(nm.sum()) for nm in normal)

    fpr, pro = [0.0], [0.0]
    for t in sorted(set(np.concatenate([m.ravel() for m in maps]).tolist()), reverse=True):
        preds = [m >= t for m in maps]
        overlap = [float((preds[k] & r).sum()) / float(r.sum()) for k, r in regions]
        fp = sum(int((p & nm).sum()) for p, nm in zip(preds, normal))
        fpr.append(fp / n_normal)
        pro.append(float(np.mean(overlap)))

    area = 0.0
    for i in range(1, len(fpr)):
        x0, x1, y0, y1 = fpr[i - 1], fpr[i], pro[i - 1], pro[i]
        if x0 >= limit:
            break
        if x1 > limit:
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
            x1 = limit
        area += (x1 - x0) * (y0 + y1) / 2
    return area / limit


def _random_instance(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    n = int(rng.integers(2, 65))
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 0, 1
    s = np.round(rng.random(n), 2)
    return s, y


def _random_pixel_fixture(rng: np.random.Generator) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    n_images = int(rng.integers(1, 3))
    n_regions = int(rng.integers(1, 4))
    masks = [np.zeros((16, 16), dtype=bool) for _ in range(n_images)]
    for r in range(n_regions):
        mask = masks[r % n_images]
        top, left = rng.integers(0, 12, size=2)
        h, w = rng.integers(1, 5, size=2)
        mask[top : top + h, left : left + w] = True
    maps = [np.round(rng.random((16, 16)) + 0.6 * m, 2) for m in masks]
    return maps, masks


class ImageMetricTests(unittest.TestCase):
    def test_worked_example(self) -> None:
        self.assertAlmostEqual(auroc(_SCORES, _LABELS), 0.75, places=12)
        self.assertAlmostEqual(average_precision(_SCORES, _LABELS), 5 / 6, places=12)
        f1, threshold = f1_max(_SCORES, _LABELS)
        self.assertAlmostEqual(f1, 0.8, places=12)
        self.assertEqual(threshold, 0.35)

    def test_perfect_separation(self) -> None:
        self.assertEqual(auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)
        self.assertEqual(average_precision([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)
        self.assertEqual(f1_max([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])[0], 1.0)

    def test_ties_count_one_half(self) -> None:
        self.assertEqual(auroc([0.5, 0.5], [0, 1]), 0.5)

    def test_matches_brute_force_on_random_instances(self) -> None:
        rng = np.random.default_rng(2024)
        for _ in range(200):
            s, y = _random_instance(rng)
            self.assertAlmostEqual(auroc(s, y), _pairwise_auroc(s, y), delta=1e-9)
            self.assertAlmostEqual(average_precision(s, y), _threshold_ap(s, y), delta=1e-9)
            f1, t = f1_max(s, y)
            ref_f1, ref_t = _threshold_f1(s, y)
            self.assertAlmostEqual(f1, ref_f1, delta=1e-9)
            self.assertEqual(t, ref_t)

    def test_label_swap_mirrors_auroc(self) -> None:
        rng = np.random.default_rng(8)
        for _ in range(50):
            s, y = _random_instance(rng)
            self.assertAlmostEqual(auroc(s, 1 - y), 1.0 - auroc(s, y), delta=1e-12)

    def test_increasing_transforms_keep_values(self) -> None:
        rng = np.random.default_rng(9)
        for _ in range(50):
            s, y = _random_instance(rng)
            t = np.exp(3.0 * s) + 7.0
            self.assertAlmostEqual(auroc(t, y), auroc(s, y), delta=1e-12)
            self.assertAlmostEqual(average_precision(t, y), average_precision(s, y), delta=1e-12)
            self.assertAlmostEqual(f1_max(t, y)[0], f1_max(s, y)[0], delta=1e-12)

    def test_f1_max_dominates_any_fixed_threshold(self) -> None:
        rng = np.random.default_rng(10)
        s, y = _random_instance(rng)
        best = f1_max(s, y)[0]
        for t in np.linspace(0, 1, 21):
            pred = s >= t
            tp = int((pred & (y == 1)).sum())
            fp = int((pred & (y == 0)).sum())
            self.assertGreaterEqual(best + 1e-12, 2 * tp / (tp + fp + int(y.sum())))

    def test_undefined_cases(self) -> None:
        self.assertIsNone(auroc([0.1, 0.2], [0, 0]))
        self.assertIsNone(auroc([0.1, 0.2], [1, 1]))
        self.assertIsNone(average_precision([0.1, 0.2], [0, 0]))
        self.assertIsNone(f1_max([0.1, 0.2], [0, 0]))

    def test_bad_inputs(self) -> None:
        with self.assertRaises(InputError):
            auroc([0.1, float("nan")], [0, 1])
        with self.assertRaises(InputError):
            auroc([0.1, 0.2, 0.3], [0, 1])


class AuproTests(unittest.TestCase):
    def test_prediction_equal_to_mask_is_perfect(self) -> None:
        mask = np.zeros((16, 16), dtype=bool)
        mask[2:6, 3:9] = True
        mask[10:12, 10:15] = True
        self.assertAlmostEqual(aupro([mask.astype(float)], [mask]), 1.0, places=12)

    def test_curve_starts_at_origin_and_ends_at_one(self) -> None:
        maps, masks = _random_pixel_fixture(np.random.default_rng(1))
        fpr, pro = pro_curve(maps, masks)
        self.assertEqual((fpr[0], pro[0]), (0.0, 0.0))
        self.assertAlmostEqual(fpr[-1], 1.0, places=12)
        self.assertAlmostEqual(pro[-1], 1.0, places=12)
        self.assertTrue(np.all(np.diff(fpr) >= 0))
        self.assertTrue(np.all(np.diff(pro) >= -1e-12))

    def test_matches_threshold_enumeration(self) -> None:
        rng = np.random.default_rng(77)
        for _ in range(50):
            maps, masks = _random_pixel_fixture(rng)
            self.assertAlmostEqual(aupro(maps, masks, 0.3), _threshold_aupro(maps, masks, 0.3), delta=1e-6)

    def test_full_limit_matches_enumeration(self) -> None:
        maps, masks = _random_pixel_fixture(np.random.default_rng(5))
        self.assertAlmostEqual(aupro(maps, masks, 1.0), _threshold_aupro(maps, masks, 1.0), delta=1e-6)

    def test_single_region_equals_partial_roc_area(self) -> None:
        rng = np.random.default_rng(12)
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:9, 5:11] = True
        amap = np.round(rng.random((16, 16)) + 0.5 * mask, 2)
        labels = mask.ravel()
        scores = amap.ravel()

        fpr, tpr = [0.0], [0.0]
        for t in sorted(set(scores.tolist()), reverse=True):
            pred = scores >= t
            tpr.append(float((pred & labels).sum()) / labels.sum())
            fpr.append(float((pred & ~labels).sum()) / (~labels).sum())
        limit = 0.3
        area = 0.0
        for i in range(1, len(fpr)):
            x0, x1, y0, y1 = fpr[i - 1], fpr[i], tpr[i - 1], tpr[i]
            if x0 >= limit:
                break
            if x1 > limit:
                y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
                x1 = limit
            area += (x1 - x0) * (y0 + y1) / 2
        self.assertAlmostEqual(aupro([amap], [mask], limit), area / limit, delta=1e-9)

    def test_quantile_sweep_is_close_to_exact(self) -> None:
        rng = np.random.default_rng(3)
        masks, maps = [], []
        for _ in range(4):
            mask = np.zeros((64, 64), dtype=bool)
            top, left = rng.integers(0, 40, size=2)
            mask[top : top + 16, left : left + 20] = True
            masks.append(mask)
            maps.append(rng.random((64, 64)) + 0.8 * mask)
        exact = aupro(maps, masks, 0.3, max_exact_pixels=10**9)
        approx = aupro(maps, masks, 0.3, max_exact_pixels=0, quantile_thresholds=200)
        self.assertLess(abs(exact - approx), 0.02)

    def test_increasing_transform_keeps_aupro(self) -> None:
        maps, masks = _random_pixel_fixture(np.random.default_rng(21))
        shifted = [np.exp(m) for m in maps]
        self.assertAlmostEqual(aupro(maps, masks), aupro(shifted, masks), delta=1e-12)

    def test_connectivity(self) -> None:
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = mask[1, 1] = True
        self.assertEqual(label_regions(mask, 4)[1], 2)
        self.assertEqual(label_regions(mask, 8)[1], 1)
        with self.assertRaises(ParameterError):
            label_regions(mask, 6)

    def test_undefined_and_invalid_inputs(self) -> None:
        zeros = np.zeros((8, 8), dtype=bool)
        self.assertIsNone(aupro([np.random.rand(8, 8)], [zeros]))
        self.assertIsNone(aupro([np.random.rand(8, 8)], [~zeros]))
        for limit in (0.0, 1.5):
            with self.assertRaises(ParameterError):
                aupro([np.random.rand(8, 8)], [zeros], limit)
        with self.assertRaises(InputError):
            aupro([np.random.rand(8, 8)], [])
        with self.assertRaises(InputError):
            aupro([np.random.rand(8, 8)], [np.zeros((4, 4))])


class ReportTests(unittest.TestCase):
    def _image_category(self, name: str, scores: List[float], labels: List[int]) -> CategoryScores:
        return CategoryScores(category=name, image_scores=np.asarray(scores), image_labels=np.asarray(labels))

    def test_mean_over_categories(self) -> None:
        report = aggregate_report(
            [
                self._image_category("b", [0.1, 0.2, 0.3, 0.4, 0.9, 0.5], [0, 0, 0, 0, 0, 1]),
                self._image_category("a", [0.1, 0.9], [0, 1]),
            ]
        )
        self.assertAlmostEqual(report.per_category["b"].image.auroc, 0.8, places=12)
        self.assertAlmostEqual(report.mean_image.auroc, 0.9, places=12)
        self.assertEqual(list(report.per_category), ["a", "b"])
        self.assertIsNone(report.mean_pixel)
        self.assertEqual(report.metadata["fpr_limit"], 0.3)

    def test_single_category_mean_equals_category(self) -> None:
        report = aggregate_report([self._image_category("x", _SCORES, _LABELS)])
        self.assertEqual(report.mean_image, report.per_category["x"].image)

    def test_category_without_anomalous_pixels_is_flagged_out_of_pixel_means(self) -> None:
        rng = np.random.default_rng(4)
        good_mask = np.zeros((16, 16), dtype=bool)
        good_mask[3:8, 3:8] = True
        good = CategoryScores(
            category="good",
            image_scores=np.asarray([0.2, 0.9]),
            image_labels=np.asarray([0, 1]),
            pixel_maps=[rng.random((16, 16)), good_mask.astype(float)],
            pixel_masks=[np.zeros((16, 16), dtype=bool), good_mask],
        )
        clean = CategoryScores(
            category="clean",
            image_scores=np.asarray([0.2, 0.3]),
            image_labels=np.asarray([0, 1]),
            pixel_maps=[rng.random((16, 16)), rng.random((16, 16))],
            pixel_masks=[np.zeros((16, 16), dtype=bool)] * 2,
        )
        report = aggregate_report([good, clean])
        self.assertIsNotNone(report.per_category["clean"].image.auroc)
        self.assertIsNone(report.per_category["clean"].pixel.auroc)
        self.assertIsNone(report.per_category["clean"].pixel.aupro)
        self.assertAlmostEqual(report.mean_pixel.auroc, report.per_category["good"].pixel.auroc, places=12)
        self.assertAlmostEqual(report.mean_pixel.aupro, report.per_category["good"].pixel.aupro, places=12)
        self.assertIn("clean: pixel.auroc undefined: single class", report.flags)
        self.assertIn(
            "clean: pixel.aupro undefined: no anomalous region or no normal pixel", report.flags
        )

    def test_empty_category_is_flagged_not_fatal(self) -> None:
        empty = CategoryScores(
            category="empty",
            image_scores=np.asarray([]),
            image_labels=np.asarray([]),
            pixel_maps=[],
            pixel_masks=[],
        )
        report = aggregate_report([self._image_category("x", _SCORES, _LABELS), empty])
        cat = report.per_category["empty"]
        self.assertEqual((cat.n_samples, cat.n_anomalous), (0, 0))
        self.assertEqual((cat.image.auroc, cat.image.ap, cat.image.f1max), (None, None, None))
        self.assertEqual((cat.pixel.auroc, cat.pixel.aupro, cat.pixel.f1max), (None, None, None))
        self.assertIn("empty: image metrics undefined: no samples", report.flags)
        self.assertIn("empty: pixel metrics undefined: no samples", report.flags)
        self.assertEqual(report.mean_image, report.per_category["x"].image)

    def test_counts(self) -> None:
        r = category_report(self._image_category("c", _SCORES, _LABELS))
        self.assertEqual((r.n_samples, r.n_anomalous), (4, 2))
        self.assertIsNone(r.pixel)

    def test_errors(self) -> None:
        with self.assertRaises(ParameterError):
            aggregate_report([])
        with self.assertRaises(ParameterError):
            aggregate_report([self._image_category("c", _SCORES, _LABELS)], fpr_limit=0.0)


if __name__ == "__main__":
    unittest.main()
