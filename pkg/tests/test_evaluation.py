import math
import random

import numpy as np
import pytest
import torch

from base import TopologyConfig
from data_utils import ImageSet
from errors import DomainError, FileError
from image_io import save_float_tiff
from evaluation import (
    BoxStats,
    EvalReport,
    accuracy,
    accuracy_from_predictions,
    box_stats,
    evaluate_attack,
    evaluate_protection,
    export_grid,
    load_grid,
    predictions,
    psnr,
    psnr_batch,
)
from conftest import read_report
from Networks import IdentityTransform


class _ConstantClassifier(torch.nn.Module):
    """Always predicts the same class"""

    def __init__(self, label, num_classes):
        super().__init__()
        self.label, self.c = label, num_classes

    def check_batch(self, x):
        pass

    def forward(self, x):
        return torch.nn.functional.one_hot(torch.full((len(x),), self.label), self.c).float()


class _OracleClassifier(_ConstantClassifier):
    """Reads the class off the first pixel (labels are painted into the images)"""

    def forward(self, x):
        labels = torch.round(x[:, 0, 0, 0] * 10).long()
        return torch.nn.functional.one_hot(labels, self.c).float()


def _painted_set(n=20, c=10):
    labels = torch.arange(n) % c
    pixels = torch.zeros((n, 3, 4, 4))
    pixels[:, 0, 0, 0] = labels.float() / 10
    return ImageSet(pixels, labels, c)


def test_all_correct_predictions_score_100():
    assert accuracy(IdentityTransform(TopologyConfig()), _OracleClassifier(0, 10), _painted_set()) == 100.0


def test_constant_predictor_scores_chance():
    assert accuracy(IdentityTransform(TopologyConfig()), _ConstantClassifier(3, 10), _painted_set()) == 10.0


def test_accuracy_of_empty_set_is_undefined():
    with pytest.raises(DomainError):
        accuracy_from_predictions(np.array([]), np.array([]))


def test_argmax_ties_go_to_lowest_index():
    probabilities = torch.tensor([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])
    assert predictions(probabilities).tolist() == [0, 1]


def test_accuracy_is_invariant_under_relabeling():
    rng = np.random.default_rng(0)
    predicted = rng.integers(0, 5, size=50)
    labels = rng.integers(0, 5, size=50)
    permutation = rng.permutation(5)
    assert accuracy_from_predictions(predicted, labels) == accuracy_from_predictions(
        permutation[predicted], permutation[labels])


def test_psnr_known_values():
    zeros, ones = torch.zeros((3, 4, 4)), torch.ones((3, 4, 4))
    assert psnr(zeros, zeros) == math.inf
    assert psnr(zeros, ones) == pytest.approx(0.0)
    assert psnr(zeros, torch.full((3, 4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_is_symmetric_and_peak_scale_free():
    generator = torch.Generator().manual_seed(2)
    a, b = torch.rand((3, 8, 8), generator=generator), torch.rand((3, 8, 8), generator=generator)
    assert psnr(a, b) == pytest.approx(psnr(b, a))
    assert psnr(255 * a, 255 * b, peak=255.0) == pytest.approx(psnr(a, b))


def test_psnr_rejects_bad_input():
    with pytest.raises(DomainError):
        psnr(torch.zeros((3, 4, 4)), torch.zeros((3, 4, 5)))
    with pytest.raises(DomainError):
        psnr(torch.zeros(3), torch.ones(3), peak=0.0)


def test_psnr_batch_is_per_image():
    a = torch.zeros((2, 3, 4, 4))
    b = torch.stack([torch.zeros((3, 4, 4)), torch.ones((3, 4, 4))])
    assert psnr_batch(a, b) == [math.inf, pytest.approx(0.0)]


def _oracle(values):
    """Sort, interpolate between order statistics, clip whiskers to observed values"""
    ordered = sorted(values)
    n = len(ordered)

    def quantile(q):
        position = q * (n - 1)
        low = int(math.floor(position))
        high = min(low + 1, n - 1)
        return ordered[low] + (position - low) * (ordered[high] - ordered[low])

    q1, median, q3 = quantile(0.25), quantile(0.5), quantile(0.75)
    reach = 1.5 * (q3 - q1)
    inside = [v for v in ordered if q1 - reach <= v <= q3 + reach]
    return q1, median, q3, min(inside), max(inside)


def test_box_stats_single_value():
    stats = box_stats([7.5])
    assert (stats.q1, stats.median, stats.q3, stats.whisker_low, stats.whisker_high) == (7.5,) * 5


def test_box_stats_median_of_one_to_nine():
    assert box_stats(range(1, 10)).median == 5.0


@pytest.mark.parametrize("size", [1, 2, 3, 4, 7, 10, 101, 1000])
def test_box_stats_matches_sort_and_interpolate_oracle(size):
    rng = random.Random(size)
    values = [rng.gauss(10, 3) for _ in range(size)] + ([60.0, -40.0] if size > 10 else [])
    stats = box_stats(values)
    expected = _oracle(values)
    actual = (stats.q1, stats.median, stats.q3, stats.whisker_low, stats.whisker_high)
    assert actual == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert stats.q1 <= stats.median <= stats.q3


def test_box_stats_whiskers_exclude_outliers():
    stats = box_stats([1, 2, 3, 4, 5, 100])
    assert stats.whisker_high == 5
    assert stats.whisker_low == 1


def test_box_stats_excludes_and_counts_infinite_values():
    stats = box_stats([1.0, 2.0, math.inf, 3.0])
    assert stats.excluded == 1 and stats.n == 3
    assert stats.median == 2.0


def test_box_stats_rejects_empty_and_nan():
    with pytest.raises(DomainError):
        box_stats([])
    with pytest.raises(DomainError):
        box_stats([1.0, float("nan")])


def test_identity_attack_scores_perfect_reconstruction(toy_split):
    identity = IdentityTransform(TopologyConfig())
    report = evaluate_attack(identity, identity, toy_split.test, batch_size=5)
    assert len(report.psnr_values) == len(toy_split.test)
    assert all(v == math.inf for v in report.psnr_values)
    assert report.box is None


def test_attack_scores_every_test_image_in_order(toy_split, toy_transform, toy_inverse):
    report = evaluate_attack(toy_inverse, toy_transform, toy_split.test, batch_size=5)
    assert len(report.psnr_values) == len(toy_split.test)
    assert report.box is not None and report.box.n == len(toy_split.test)


def test_protection_report(toy_split, toy_transform, toy_classifier):
    report = evaluate_protection(toy_transform, toy_classifier, toy_split.test, batch_size=7)
    assert 0.0 <= report.accuracy_percent <= 100.0
    assert len(report.psnr_values) == len(toy_split.test)
    assert report.accuracy_percent == accuracy(toy_transform, toy_classifier, toy_split.test)


def test_report_save_writes_summary_and_values(tmp_path):
    report = EvalReport("attack", 42.0, [5.5, math.inf, 7.25], box_stats([5.5, math.inf, 7.25]),
                        config_digest="abc")
    path = report.save(tmp_path, "attack_report")
    summary, values = read_report(path)
    assert values == [5.5, math.inf, 7.25]
    assert BoxStats(**summary["box"]) == report.box
    assert summary["mean_psnr"] == pytest.approx(6.375)
    assert summary["images"] == 3 and summary["config_digest"] == "abc"
    assert (tmp_path / "attack_report_psnr.txt").read_text().splitlines()[1] == "inf"


def test_grid_reload_is_bit_exact(tmp_path):
    generator = torch.Generator().manual_seed(0)
    rows = [(label, [torch.rand((3, 32, 32), generator=generator) for _ in range(10)])
            for label in ("plain", "protected", "estimated")]
    path = export_grid(rows, tmp_path / "grid.tiff")
    reloaded = load_grid(path)
    assert [label for label, _ in reloaded] == ["plain", "protected", "estimated"]
    for (_, written), (_, read) in zip(rows, reloaded):
        assert len(read) == 10
        assert all(torch.equal(a, b) for a, b in zip(written, read))


def test_grid_keeps_single_channel_rows(tmp_path):
    rows = [("plain", [torch.rand((1, 8, 8)) for _ in range(3)])]
    reloaded = load_grid(export_grid(rows, tmp_path / "gray.tiff"))
    assert all(torch.equal(a, b) for a, b in zip(rows[0][1], reloaded[0][1]))


def test_float_tiff_without_layout_is_not_a_grid(tmp_path):
    path = save_float_tiff(torch.rand((3, 8, 8)), tmp_path / "single.tiff")
    with pytest.raises(FileError):
        load_grid(path)


def test_grid_rejects_mixed_shapes(tmp_path):
    with pytest.raises(DomainError):
        export_grid([("a", [torch.zeros((3, 4, 4))]), ("b", [torch.zeros((3, 8, 8))])], tmp_path / "g.tiff")


def test_unreadable_grid_is_a_file_error(tmp_path):
    path = tmp_path / "not-a-grid.tiff"
    path.write_bytes(b"nope")
    with pytest.raises(FileError):
        load_grid(path)


def test_box_stats_oracle_on_random_instances():
    rng = random.Random(2024)
    for _ in range(200):
        values = [rng.uniform(-5, 40) for _ in range(rng.randint(1, 1000))]
        stats = box_stats(values)
        actual = (stats.q1, stats.median, stats.q3, stats.whisker_low, stats.whisker_high)
        assert actual == pytest.approx(_oracle(values), rel=1e-12, abs=1e-9)
