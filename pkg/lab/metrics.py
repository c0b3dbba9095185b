import logging
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from lab.errors import DimensionMismatchError, InvalidInputError
from schemas.metrics import BinaryMask, MetricsConvention, MetricsResult, SurfacePointSet

logger = logging.getLogger("coarsegrain.metrics")

# 4-neighbour connectivity
CROSS = ndimage.generate_binary_structure(2, 1)


def _check_pair(pred: BinaryMask, gt: BinaryMask):
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"Mask shapes differ: {pred.shape} vs {gt.shape}")
    if pred.spacing != gt.spacing:
        raise InvalidInputError(f"Mask spacings differ: {pred.spacing} vs {gt.spacing}")


def mask_from_labels(labels, target_class: int = 1, spacing: tuple[float, float] = (1.0, 1.0)) -> BinaryMask:
    return BinaryMask(pixels=np.asarray(labels) == target_class, spacing=spacing)


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """
    Dice overlap 2|P & G| / (|P| + |G|); 1.0 when both masks are empty

    :param pred: Predicted mask
    :param gt: Ground-truth mask
    :return: Dice score in [0, 1]
    """
    _check_pair(pred, gt)
    total = int(pred.pixels.sum()) + int(gt.pixels.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred.pixels, gt.pixels).sum()) / total


def boundary(mask: BinaryMask) -> np.ndarray:
    """
    Foreground pixels with at least one background 4-neighbour. Pixels outside the image count as background
    """
    interior = ndimage.binary_erosion(mask.pixels, structure=CROSS, border_value=0)
    return mask.pixels & ~interior


def surface_points(mask: BinaryMask) -> SurfacePointSet:
    """
    Boundary pixels of a mask in physical coordinates

    :param mask: Mask
    :return: Points in row-major order, empty for an empty mask
    """
    points = np.argwhere(boundary(mask)).astype(float) * np.asarray(mask.spacing)
    return SurfacePointSet(points=points.reshape(-1, 2))


def directed_distances(source: BinaryMask, target: BinaryMask, exact_side: int = 64) -> np.ndarray:
    """
    Distance from every surface point of ``source`` to the nearest surface point of ``target``. Small grids use
    all-pairs distances; a grid larger than ``exact_side`` in either direction uses a Euclidean distance
    transform of the target surface

    :param source: Mask whose surface points are measured
    :param target: Mask whose surface is measured against, non-empty
    :param exact_side: Largest height and width handled with all-pairs distances
    :return: One distance per source surface point, in row-major order
    """
    _check_pair(source, target)
    if target.empty:
        raise InvalidInputError("Distances to an empty surface are undefined")
    if max(source.shape) <= exact_side:
        a, b = surface_points(source).points, surface_points(target).points
        if len(a) == 0:
            return np.zeros(0)
        return cdist(a, b).min(axis=1)

    transform = ndimage.distance_transform_edt(~boundary(target), sampling=source.spacing)
    return transform[boundary(source)]


def _pooled(pred: BinaryMask, gt: BinaryMask, exact_side: int) -> np.ndarray:
    return np.concatenate([directed_distances(pred, gt, exact_side), directed_distances(gt, pred, exact_side)])


def hd95(pred: BinaryMask, gt: BinaryMask, percentile: float = 95.0, exact_side: int = 64) -> float:
    """
    95th percentile of the pooled symmetric surface distances, with linear interpolation between order statistics.
    If either surface is empty the image diagonal is returned instead

    :param pred: Predicted mask
    :param gt: Ground-truth mask
    :param percentile: Percentile of the pooled distances
    :param exact_side: Largest height and width handled with all-pairs distances
    :return: Distance in physical units
    """
    _check_pair(pred, gt)
    if pred.empty or gt.empty:
        return gt.diagonal
    return float(np.percentile(_pooled(pred, gt, exact_side), percentile))


def nsd(pred: BinaryMask, gt: BinaryMask, tolerance: float = 1.0, exact_side: int = 64) -> float:
    """
    Fraction of pooled surface points of both masks lying within ``tolerance`` of the other surface. Two empty
    masks agree perfectly (1.0); one empty mask scores 0.0

    :param pred: Predicted mask
    :param gt: Ground-truth mask
    :param tolerance: Physical distance tolerance, >= 0
    :param exact_side: Largest height and width handled with all-pairs distances
    :return: NSD in [0, 1]
    """
    if tolerance < 0:
        raise InvalidInputError(f"Tolerance must be non-negative, got {tolerance}")
    _check_pair(pred, gt)
    if pred.empty and gt.empty:
        return 1.0
    if pred.empty or gt.empty:
        return 0.0
    pooled = _pooled(pred, gt, exact_side)
    return int(np.count_nonzero(pooled <= tolerance)) / pooled.size


def evaluate(pred: BinaryMask, gt: BinaryMask, convention: Optional[MetricsConvention] = None) -> MetricsResult:
    """
    All three metrics with their degenerate-case flags
    """
    convention = convention or MetricsConvention()
    _check_pair(pred, gt)
    if pred.empty or gt.empty:
        logger.debug(f"Degenerate masks: prediction empty={pred.empty}, ground truth empty={gt.empty}")
    return MetricsResult(dice=dice(pred, gt),
                         hd95=hd95(pred, gt, convention.percentile, convention.exact_side),
                         nsd=nsd(pred, gt, convention.tolerance, convention.exact_side),
                         tolerance=convention.tolerance,
                         empty_prediction=pred.empty,
                         empty_ground_truth=gt.empty)
