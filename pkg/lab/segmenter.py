import logging
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from lab.core import batch_logits, check_theta, expand_classes, softmax_array, vector_jacobian_product
from lab.errors import DimensionMismatchError, InvalidInputError, TrainingError
from lab.rng import derive_rng
from lab.scenes import FEATURE_DIM, apply_scheme, extract_features
from schemas.core import Architecture, SoftmaxModel
from schemas.metrics import BinaryMask
from schemas.segbench import (LESION, Checkpoint, LabeledImage, LabelScheme, ModelConfig, Segmenter, TrainConfig,
                              WarmStart)

logger = logging.getLogger("coarsegrain.segmenter")

MIN_FEATURE_SCALE = 1e-12


# PIXEL POOL #


def sample_pixels(img: LabeledImage, cfg: TrainConfig, seed: int, image_index: int) -> np.ndarray:
    """
    Flat indices of the training pixels of one image. A ``foreground_fraction`` share is drawn from lesion pixels
    of the original labels, the rest uniformly, so the pool never depends on the labeling scheme
    """
    rng = derive_rng(seed, "pool", image_index)
    foreground = np.flatnonzero(img.labels.ravel() == LESION)
    n_fg = int(round(cfg.pixels_per_image * cfg.foreground_fraction)) if foreground.size else 0
    picks = [foreground[rng.integers(0, foreground.size, n_fg)]] if n_fg else []
    picks.append(rng.integers(0, img.labels.size, cfg.pixels_per_image - n_fg))
    return np.concatenate(picks)


def pixel_pool(images: Sequence[LabeledImage], scheme: LabelScheme, cfg: TrainConfig,
               seed: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Features and scheme labels of the training pixels of every image

    :return: (N, d) features and (N,) labels
    """
    features, labels = [], []
    for i, img in enumerate(images):
        idx = sample_pixels(img, cfg, seed, i)
        features.append(extract_features(img)[idx])
        labels.append(apply_scheme(img, scheme, seed, i).labels.ravel()[idx])
    return np.vstack(features), np.concatenate(labels)


# TRAINING #


def _initial_parameters(model: SoftmaxModel, seed: int) -> np.ndarray:
    if model.architecture is Architecture.linear:
        return np.zeros(model.param_count)
    rng = derive_rng(seed, "init")
    h, d, k = model.hidden_width, model.feature_dim, model.class_count
    return np.concatenate([rng.normal(0.0, 1.0 / np.sqrt(d), h * d), np.zeros(h),
                           rng.normal(0.0, 0.1 / np.sqrt(h), k * h), np.zeros(k)])


def _warm_parameters(warm: WarmStart, model: SoftmaxModel, scheme: LabelScheme) -> np.ndarray:
    source = warm.source
    if not scheme.collapses_to_binary and not source.scheme.collapses_to_binary:
        raise InvalidInputError("Warm starts into an auxiliary-label scheme must come from a binary segmenter")
    if source.model.class_count > model.class_count:
        raise InvalidInputError(f"Cannot warm-start {model.class_count} classes from {source.model.class_count}")
    return expand_classes(source.model, source.theta, model, list(range(source.model.class_count)))


def batch_loss(model: SoftmaxModel, theta: np.ndarray, x: np.ndarray, y: np.ndarray,
               weight_decay: float) -> tuple[float, np.ndarray]:
    """
    Mean cross-entropy of a batch and the gradient of the weight-decayed loss
    """
    f = batch_logits(model, theta, x)
    rows = np.arange(y.size)
    loss = float(np.mean(logsumexp(f, axis=1) - f[rows, y]))
    residual = -softmax_array(f)
    residual[rows, y] += 1.0
    grad = -vector_jacobian_product(model, theta, x, residual) / y.size + weight_decay * theta
    return loss, grad


def train_segmenter(train_imgs: Sequence[LabeledImage], scheme: LabelScheme, model_cfg: ModelConfig,
                    fit_cfg: TrainConfig, seed: int, init: Optional[WarmStart] = None,
                    checkpoints: Sequence[int] = ()) -> Segmenter:
    """
    Train a pixel classifier with momentum SGD and polynomial learning-rate decay. The pixel pool, its shuffling
    and the initialization depend only on (images, config, seed), so schemes that produce the same labels produce
    the same parameters

    :param train_imgs: Training scenes with original labels
    :param scheme: Labeling scheme
    :param model_cfg: Classifier architecture
    :param fit_cfg: Optimizer budget, shared by every compared scheme
    :param seed: Seed of the training run
    :param init: Warm start; the learning rate is scaled by its ``lr_scale``
    :param checkpoints: Epochs after which a copy of the parameters is kept
    :return: Trained segmenter
    """
    if not train_imgs:
        raise InvalidInputError("At least one training image is required")
    if any(e < 1 or e > fit_cfg.epochs for e in checkpoints):
        raise InvalidInputError(f"Checkpoints must lie within 1..{fit_cfg.epochs}")

    x, y = pixel_pool(train_imgs, scheme, fit_cfg, seed)
    model = SoftmaxModel(feature_dim=FEATURE_DIM, class_count=scheme.class_count,
                         architecture=model_cfg.architecture, hidden_width=model_cfg.hidden_width)
    lr = fit_cfg.lr
    if init is None:
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale < MIN_FEATURE_SCALE] = 1.0
        theta = _initial_parameters(model, seed)
    else:
        shift, scale = init.source.feature_shift, init.source.feature_scale
        theta = _warm_parameters(init, model, scheme)
        lr *= init.lr_scale
    x = (x - shift) / scale

    n = y.size
    steps_per_epoch = -(-n // fit_cfg.batch_size)
    total = fit_cfg.epochs * steps_per_epoch
    velocity = np.zeros_like(theta)
    step = 0
    losses = []
    snapshots = []
    logger.debug(f"Training {scheme.name} on {n} pixels for {fit_cfg.epochs} epochs")

    for epoch in range(1, fit_cfg.epochs + 1):
        order = derive_rng(seed, "shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, fit_cfg.batch_size):
            batch = order[start:start + fit_cfg.batch_size]
            rate = lr * (1.0 - step / total) ** fit_cfg.poly_power
            loss, grad = batch_loss(model, theta, x[batch], y[batch], fit_cfg.weight_decay)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"Loss became {loss} in epoch {epoch}, step {step} ({scheme.name} scheme, "
                                    f"learning rate {rate:.3e}, parameter norm {np.linalg.norm(theta):.3e})")
            velocity = fit_cfg.momentum * velocity + grad
            theta = theta - rate * velocity
            epoch_loss += loss * batch.size
            step += 1
        losses.append(epoch_loss / n)
        if epoch in checkpoints:
            snapshots.append(Checkpoint(epoch=epoch, theta=theta))

    converged = len(losses) >= 2 and abs(losses[-1] - losses[-2]) <= fit_cfg.loss_tol * max(losses[-1], 1e-12)
    return Segmenter(model=model, theta=theta, scheme=scheme, feature_shift=shift, feature_scale=scale,
                     epochs=fit_cfg.epochs, final_loss=losses[-1], converged=converged, checkpoints=tuple(snapshots))


# INFERENCE #


def predict_labels(seg: Segmenter, img: LabeledImage) -> np.ndarray:
    """
    Per-pixel argmax over the segmenter's classes; ties go to the lowest class id

    :return: (H, W) class ids
    """
    x = extract_features(img)
    if x.shape[1] != seg.model.feature_dim:
        raise DimensionMismatchError(f"Segmenter expects {seg.model.feature_dim} features, got {x.shape[1]}")
    theta = check_theta(seg.model, seg.theta)
    logits = batch_logits(seg.model, theta, (x - seg.feature_shift) / seg.feature_scale)
    return np.argmax(logits, axis=1).reshape(img.shape)


def predict_mask(seg: Segmenter, img: LabeledImage, target_class: int = LESION) -> BinaryMask:
    """
    Mask of pixels whose argmax class is the target
    """
    if not 0 <= target_class < seg.model.class_count:
        raise InvalidInputError(f"Target class {target_class} out of range")
    return BinaryMask(pixels=predict_labels(seg, img) == target_class, spacing=img.spacing)
