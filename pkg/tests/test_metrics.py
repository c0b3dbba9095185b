import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lab import metrics as metrics_module
from lab.errors import DimensionMismatchError, InvalidInputError
from lab.metrics import (boundary, dice, directed_distances, evaluate, hd95, mask_from_labels, nsd,
                         surface_points)
from schemas.metrics import BinaryMask, MetricsConvention


def mask(shape, *pixels, spacing=(1.0, 1.0)) -> BinaryMask:
    grid = np.zeros(shape, dtype=bool)
    for r, c in pixels:
        grid[r, c] = True
    return BinaryMask(pixels=grid, spacing=spacing)


# BRUTE FORCE #


def naive_surface(m: BinaryMask) -> list[tuple[float, float]]:
    rows, cols = m.shape
    points = []
    for r in range(rows):
        for c in range(cols):
            if not m.pixels[r, c]:
                continue
            neighbours = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
            if any(not (0 <= i < rows and 0 <= j < cols) or not m.pixels[i, j] for i, j in neighbours):
                points.append((r * m.spacing[0], c * m.spacing[1]))
    return points


def naive_directed(source: list, target: list) -> list[float]:
    return [min(math.dist(p, q) for q in target) for p in source]


def naive_pooled(a: BinaryMask, b: BinaryMask) -> list[float]:
    sa, sb = naive_surface(a), naive_surface(b)
    return naive_directed(sa, sb) + naive_directed(sb, sa)


def naive_percentile(values: list[float], p: float) -> float:
    s = sorted(values)
    pos = p / 100 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def naive_metrics(a: BinaryMask, b: BinaryMask, tolerance: float) -> tuple[float, float, float]:
    """
    Dice, HD-95 and NSD from pixel sets and all-pairs distances, with the empty-mask conventions spelled out
    """
    pa = {(r, c) for r, c in itertools.product(range(a.shape[0]), range(a.shape[1])) if a.pixels[r, c]}
    pb = {(r, c) for r, c in itertools.product(range(b.shape[0]), range(b.shape[1])) if b.pixels[r, c]}
    overlap = 1.0 if not pa and not pb else 2 * len(pa & pb) / (len(pa) + len(pb))
    if not pa and not pb:
        return overlap, math.hypot(a.shape[0], a.shape[1]), 1.0
    if not pa or not pb:
        return overlap, math.hypot(a.shape[0], a.shape[1]), 0.0
    pooled = naive_pooled(a, b)
    return overlap, naive_percentile(pooled, 95.0), sum(d <= tolerance for d in pooled) / len(pooled)


def all_masks(shape: tuple[int, int], max_pixels: int = 6) -> list[BinaryMask]:
    cells = list(itertools.product(range(shape[0]), range(shape[1])))
    return [mask(shape, *subset) for k in range(min(max_pixels, len(cells)) + 1)
            for subset in itertools.combinations(cells, k)]


# every grid of at most six pixels, so every mask on it has at most six foreground pixels
SMALL_SHAPES = [(h, w) for h in range(1, 7) for w in range(1, 7) if h * w <= 6]


def assert_matches_brute_force(pairs, tolerance: float) -> int:
    count = 0
    for a, b in pairs:
        expected_dice, expected_hd, expected_nsd = naive_metrics(a, b, tolerance)
        assert dice(a, b) == expected_dice
        assert hd95(a, b) == pytest.approx(expected_hd, rel=1e-15, abs=1e-15)
        assert nsd(a, b, tolerance) == expected_nsd
        if not a.empty and not b.empty:
            expected = naive_directed(naive_surface(a), naive_surface(b))
            assert_allclose(directed_distances(a, b, exact_side=0), expected, rtol=1e-15)
            assert_allclose(directed_distances(a, b), expected, rtol=1e-15)
        count += 1
    return count


# DICE #


def test_dice_examples():
    a = mask((3, 3), (0, 0), (0, 1))
    b = mask((3, 3), (0, 1), (1, 1))
    assert dice(a, a) == 1.0
    assert dice(a, mask((3, 3), (2, 2))) == 0.0
    assert dice(a, b) == 0.5
    assert dice(a, b) == dice(b, a)


def test_dice_empty_conventions():
    empty = mask((3, 3))
    assert dice(empty, empty) == 1.0
    assert dice(empty, mask((3, 3), (1, 1))) == 0.0


def test_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        dice(mask((3, 3)), mask((3, 4)))
    with pytest.raises(InvalidInputError):
        hd95(mask((3, 3), (0, 0)), mask((3, 3), (0, 0), spacing=(2.0, 1.0)))


# SURFACES #


def test_surface_of_single_pixel():
    assert_allclose(surface_points(mask((5, 5), (2, 3))).points, [[2.0, 3.0]])


def test_surface_of_filled_square_excludes_centre():
    square = mask((5, 5), *[(r, c) for r in range(1, 4) for c in range(1, 4)])
    edge = boundary(square)
    assert edge.sum() == 8
    assert not edge[2, 2]


def test_surface_of_full_image_is_border_ring():
    full = BinaryMask(pixels=np.ones((4, 5), dtype=bool))
    edge = boundary(full)
    assert edge.sum() == 2 * 4 + 2 * 5 - 4
    assert not edge[1:-1, 1:-1].any()


def test_surface_uses_spacing():
    assert_allclose(surface_points(mask((3, 3), (1, 2), spacing=(2.0, 0.5))).points, [[2.0, 1.0]])


def test_empty_surface():
    assert len(surface_points(mask((3, 3)))) == 0


# SURFACE DISTANCES #


def test_single_pixel_distance_examples():
    a = mask((10, 10), (0, 0))
    b = mask((10, 10), (3, 4))
    assert hd95(a, b) == 5.0
    assert nsd(a, b, 5.0) == 1.0
    assert nsd(a, b, 4.9) == 0.0


def test_identical_masks():
    a = mask((6, 6), (1, 1), (1, 2), (4, 4))
    assert hd95(a, a) == 0.0
    assert nsd(a, a, 0.0) == 1.0


def test_empty_mask_conventions():
    a = mask((6, 8), (1, 1))
    empty = mask((6, 8))
    assert hd95(empty, a) == pytest.approx(10.0)
    assert hd95(a, empty) == pytest.approx(10.0)
    assert nsd(empty, a) == 0.0
    assert nsd(empty, empty) == 1.0
    result = evaluate(empty, a)
    assert result.empty_prediction and not result.empty_ground_truth
    assert result.degenerate
    assert result.flags == "empty_prediction"


def test_negative_tolerance():
    a = mask((3, 3), (1, 1))
    with pytest.raises(InvalidInputError):
        nsd(a, a, -0.1)


def test_translation_and_symmetry():
    a = mask((12, 12), (1, 1), (1, 2), (2, 2), (3, 5))
    b = mask((12, 12), (2, 1), (5, 5), (5, 6))
    shifted_a = mask((12, 12), (4, 4), (4, 5), (5, 5), (6, 8))
    shifted_b = mask((12, 12), (5, 4), (8, 8), (8, 9))
    assert hd95(a, b) == hd95(b, a)
    assert nsd(a, b) == nsd(b, a)
    assert hd95(a, b) == pytest.approx(hd95(shifted_a, shifted_b))
    assert nsd(a, b) == nsd(shifted_a, shifted_b)
    assert dice(a, b) == dice(shifted_a, shifted_b)


def test_nsd_monotone_in_tolerance():
    a = mask((6, 6), (0, 0), (1, 2), (4, 5))
    b = mask((6, 6), (2, 2), (5, 0))
    values = [nsd(a, b, t) for t in np.linspace(0.0, 8.0, 33)]
    assert all(x <= y for x, y in zip(values, values[1:]))
    assert values[0] == 0.0
    assert values[-1] == 1.0


def test_matches_brute_force_on_every_small_mask_pair():
    count = 0
    for shape in SMALL_SHAPES:
        masks = all_masks(shape)
        count += assert_matches_brute_force(itertools.product(masks, masks), tolerance=1.0)
    assert count >= 10_000


@pytest.mark.slow
def test_matches_brute_force_on_sparse_six_by_six_masks():
    sparse = all_masks((6, 6), max_pixels=2)
    single = all_masks((6, 6), max_pixels=1)
    count = assert_matches_brute_force(itertools.product(sparse, single), tolerance=1.5)
    count += assert_matches_brute_force(itertools.product(single, sparse), tolerance=1.5)
    assert count == 2 * len(sparse) * len(single)


def test_distance_transform_convention_agrees_with_all_pairs():
    masks = all_masks((2, 3))
    exact = MetricsConvention()
    transformed = MetricsConvention(exact_side=0)
    for a, b in itertools.product(masks, masks):
        assert evaluate(a, b, exact) == evaluate(a, b, transformed)


def test_distance_transform_with_anisotropic_spacing():
    a = mask((80, 80), (10, 10), (10, 11), spacing=(0.5, 2.0))
    b = mask((80, 80), (30, 40), spacing=(0.5, 2.0))
    assert_allclose(directed_distances(a, b, exact_side=0), directed_distances(a, b, exact_side=10**6))


def test_distance_transform_only_beyond_side_limit(monkeypatch):
    shapes = []
    transform = metrics_module.ndimage.distance_transform_edt

    def recording(image, *args, **kwargs):
        shapes.append(image.shape)
        return transform(image, *args, **kwargs)

    monkeypatch.setattr(metrics_module.ndimage, "distance_transform_edt", recording)
    for shape in [(64, 64), (1, 64), (64, 3)]:
        m = mask(shape, (0, 0), (shape[0] - 1, shape[1] - 1))
        assert_allclose(directed_distances(m, m), 0.0)
    assert shapes == []
    for shape in [(65, 10), (10, 65), (1, 5000)]:
        a = mask(shape, (0, 0))
        b = mask(shape, (shape[0] - 1, shape[1] - 1))
        assert_allclose(directed_distances(a, b), [math.hypot(shape[0] - 1, shape[1] - 1)])
    assert shapes == [(65, 10), (10, 65), (1, 5000)]


def test_mask_from_labels():
    m = mask_from_labels([[0, 1, 2], [1, 1, 0]], target_class=1, spacing=(2.0, 2.0))
    assert m.pixels.sum() == 3
    assert m.spacing == (2.0, 2.0)
