import logging

import numpy as np
from scipy import ndimage

from lab.errors import GenerationError, InvalidInputError
from lab.rng import derive_rng
from schemas.segbench import (BACKGROUND, HOST_ORGAN, LESION, MIMIC, NEIGHBOR_ORGAN, LabeledImage, LabelScheme,
                              LesionPlacement, SceneConfig, SchemeKind)

logger = logging.getLogger("coarsegrain.scenes")

CROSS = ndimage.generate_binary_structure(2, 1)
FEATURE_NAMES = ("intensity", "mean3", "var3", "mean7", "var7", "row", "col")
FEATURE_DIM = len(FEATURE_NAMES)
# Organs that neighbour the host organ come within this many pixels of it
NEIGHBOR_GAP = 4


# SCENE GENERATION #


class _Canvas:
    """
    Label map under construction, with the retry budget shared by every placement
    """

    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.labels = np.full((cfg.height, cfg.width), BACKGROUND, dtype=np.int64)
        self.rows, self.cols = np.mgrid[0:cfg.height, 0:cfg.width]

    def count(self, bounds: tuple[int, int]) -> int:
        return int(self.rng.integers(bounds[0], bounds[1] + 1))

    def ellipse(self, center: np.ndarray, axes: np.ndarray, angle: float) -> np.ndarray:
        dr, dc = self.rows - center[0], self.cols - center[1]
        cos, sin = np.cos(angle), np.sin(angle)
        u = (dr * cos + dc * sin) / axes[0]
        v = (-dr * sin + dc * cos) / axes[1]
        return u ** 2 + v ** 2 <= 1.0

    def shape_at(self, center: np.ndarray, size: tuple[float, float]) -> np.ndarray | None:
        """
        Random ellipse around ``center``; None when it would leave the image
        """
        axes = self.rng.uniform(size[0], size[1], 2)
        angle = self.rng.uniform(0.0, np.pi)
        extent = axes.max()
        if center[0] - extent < 0 or center[1] - extent < 0 or \
                center[0] + extent > self.cfg.height - 1 or center[1] + extent > self.cfg.width - 1:
            return None
        mask = self.ellipse(center, axes, angle)
        return mask if mask.any() else None

    def uniform_center(self) -> np.ndarray:
        return self.rng.uniform([0.0, 0.0], [self.cfg.height - 1, self.cfg.width - 1])

    def center_in(self, region: np.ndarray) -> np.ndarray | None:
        candidates = np.argwhere(region)
        if candidates.size == 0:
            return None
        return candidates[self.rng.integers(0, len(candidates))].astype(float)

    def place(self, what: str, size: tuple[float, float], propose, accept) -> np.ndarray:
        for _ in range(self.cfg.max_retries):
            center = propose()
            if center is None:
                continue
            mask = self.shape_at(center, size)
            if mask is not None and accept(mask):
                return mask
        raise GenerationError(f"Could not place {what} after {self.cfg.max_retries} attempts")


def generate_scene(cfg: SceneConfig, seed: int) -> LabeledImage:
    """
    Draw a synthetic scene: elliptical organs, small lesions placed by the configured rule, mimics in the residual
    background, and per-class intensities with smooth texture and i.i.d. noise

    :param cfg: Scene layout
    :param seed: Seed of this scene
    :return: Labeled image
    """
    canvas = _Canvas(cfg, derive_rng(seed, "scene"))
    labels = canvas.labels

    for _ in range(canvas.count(cfg.organ_count)):
        mask = canvas.place("organ", cfg.organ_size, canvas.uniform_center,
                            lambda m: not np.any(m & (labels != BACKGROUND)))
        labels[mask] = HOST_ORGAN
    host = labels == HOST_ORGAN

    host_reach = ndimage.binary_dilation(host, CROSS, iterations=NEIGHBOR_GAP) if host.any() else None
    for _ in range(canvas.count(cfg.neighbor_count)):
        mask = canvas.place("neighbouring organ", cfg.neighbor_size, canvas.uniform_center,
                            lambda m: not np.any(m & (labels != BACKGROUND))
                            and (host_reach is None or np.any(m & host_reach)))
        labels[mask] = NEIGHBOR_ORGAN

    for _ in range(canvas.count(cfg.lesion_count)):
        if cfg.placement is LesionPlacement.inside_organ:
            mask = canvas.place("lesion", cfg.lesion_size, lambda: canvas.center_in(labels == HOST_ORGAN),
                                lambda m: bool(np.all(labels[m] == HOST_ORGAN)))
        else:
            touch = ndimage.binary_dilation(host, CROSS, iterations=2)
            ring = ndimage.binary_dilation(host, CROSS, iterations=int(np.ceil(cfg.lesion_size[1])) + 2) & ~host
            mask = canvas.place("lesion", cfg.lesion_size, lambda: canvas.center_in(ring & (labels == BACKGROUND)),
                                lambda m: bool(np.all(labels[m] == BACKGROUND)) and bool(np.any(m & touch)))
        labels[mask] = LESION

    for _ in range(canvas.count(cfg.mimic_count)):
        occupied = ndimage.binary_dilation(labels != BACKGROUND, CROSS)
        mask = canvas.place("mimic", cfg.mimic_size, canvas.uniform_center, lambda m: not np.any(m & occupied))
        labels[mask] = MIMIC

    rng = canvas.rng
    intensities = cfg.class_means[labels]
    if cfg.texture > 0:
        field = ndimage.gaussian_filter(rng.standard_normal(labels.shape), sigma=1.0)
        intensities = intensities + cfg.texture * field / max(float(field.std()), np.finfo(float).tiny)
    if cfg.noise > 0:
        intensities = intensities + cfg.noise * rng.standard_normal(labels.shape)

    return LabeledImage(intensities=intensities, labels=labels, spacing=cfg.spacing)


# FEATURES #


def _window_stats(x: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    mean = ndimage.uniform_filter(x, size=size, mode="nearest")
    square = ndimage.uniform_filter(x * x, size=size, mode="nearest")
    return mean, np.maximum(square - mean ** 2, 0.0)


def extract_features(img: LabeledImage) -> np.ndarray:
    """
    Per-pixel features in row-major pixel order: intensity, 3x3 and 7x7 window mean and variance (edges clamped),
    and row and column scaled to [0, 1]

    :param img: Image
    :return: (H * W, 7) feature matrix
    """
    x = np.asarray(img.intensities, dtype=float)
    h, w = x.shape
    mean3, var3 = _window_stats(x, 3)
    mean7, var7 = _window_stats(x, 7)
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    rows = rows / (h - 1) if h > 1 else np.zeros_like(rows)
    cols = cols / (w - 1) if w > 1 else np.zeros_like(cols)
    return np.stack([x, mean3, var3, mean7, var7, rows, cols], axis=-1).reshape(h * w, FEATURE_DIM)


# LABEL SCHEMES #


def _perturb_boundaries(labels: np.ndarray, scheme: LabelScheme, seed: int, image_index: int) -> np.ndarray:
    """
    With probability ``label_noise`` per auxiliary structure, grow it into background or shrink it by one pixel.
    Coins are drawn for every auxiliary id regardless of the scheme kind, so schemes see the same perturbations
    """
    rng = derive_rng(seed, "label-noise", image_index)
    labels = labels.copy()
    for aux in scheme.aux_ids:
        perturb, grow = rng.random(2)
        if perturb >= scheme.label_noise:
            continue
        region = labels == aux
        if grow < 0.5:
            labels[ndimage.binary_dilation(region, CROSS) & (labels == BACKGROUND)] = aux
        else:
            labels[region & ~ndimage.binary_erosion(region, CROSS, border_value=1)] = BACKGROUND
    return labels


def keeps_aux(scheme: LabelScheme, seed: int, image_index: int) -> bool:
    """
    Whether auxiliary labels survive on this training image. Partial schemes keep them when the image's draw from
    the ("partial", image) stream falls below the fraction
    """
    if scheme.kind is not SchemeKind.partial:
        return bool(scheme.kept_aux)
    return bool(derive_rng(seed, "partial", image_index).random() < scheme.fraction)


def scheme_class_names(img: LabeledImage, scheme: LabelScheme) -> tuple[str, ...]:
    names = [img.class_names[BACKGROUND], img.class_names[LESION]]
    names += [img.class_names[aux] for aux in scheme.kept_aux]
    if scheme.kind is SchemeKind.virtual:
        names += [f"virtual-{i}" for i in range(scheme.extra_channels)]
    return tuple(names)


def apply_scheme(img: LabeledImage, scheme: LabelScheme, seed: int, image_index: int = 0) -> LabeledImage:
    """
    Relabel a scene for training under a scheme. Background stays 0, lesions become 1 and kept auxiliary ids become
    2, 3, ... in ``aux_ids`` order; everything else collapses into background. Virtual-class schemes relabel like
    the binary scheme and only add unlabeled channels to the model

    :param img: Scene with its original label ids
    :param scheme: Labeling scheme
    :param seed: Seed of the training run
    :param image_index: Position of the image in the training set
    :return: Relabeled copy
    """
    unknown = [aux for aux in scheme.aux_ids if aux >= img.class_count]
    if unknown:
        raise InvalidInputError(f"Unknown class ids {unknown} for an image with {img.class_count} classes")

    labels = img.labels
    if scheme.label_noise > 0:
        labels = _perturb_boundaries(labels, scheme, seed, image_index)

    out = np.full(labels.shape, BACKGROUND, dtype=np.int64)
    out[labels == LESION] = 1
    if keeps_aux(scheme, seed, image_index):
        for i, aux in enumerate(scheme.kept_aux):
            out[labels == aux] = 2 + i
    return LabeledImage(intensities=img.intensities, labels=out, class_names=scheme_class_names(img, scheme),
                        spacing=img.spacing)
