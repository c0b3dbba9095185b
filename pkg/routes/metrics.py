import logging
import sys

from lab.errors import DimensionMismatchError, InvalidInputError
from lab.io import metrics_row, read_label_grid, write_metrics
from lab.metrics import evaluate, mask_from_labels
from routes.utils import RunContext
from schemas.experiment import ExperimentConfig
from schemas.metrics import MetricsConvention
from utils import to_label_id

logger = logging.getLogger("coarsegrain.routes.metrics")


def run(cfg: ExperimentConfig, ctx: RunContext) -> bool:
    """
    Evaluate a predicted label grid against a ground-truth grid, print the CSV row and keep it as a report
    """
    spec = cfg.metrics
    if not spec.prediction or not spec.ground_truth:
        raise InvalidInputError("Metric evaluation needs a prediction and a ground-truth grid")
    target = to_label_id(spec.target_class)
    prediction = read_label_grid(spec.prediction)
    truth = read_label_grid(spec.ground_truth)
    if prediction.shape != truth.shape:
        raise DimensionMismatchError(f"Grid shapes differ: {prediction.shape} vs {truth.shape}")

    result = evaluate(mask_from_labels(prediction, target, spec.spacing), mask_from_labels(truth, target, spec.spacing),
                      MetricsConvention(tolerance=spec.tolerance))
    write_metrics(ctx.path("metrics.csv"), result)
    sys.stdout.write(metrics_row(result) + "\n")
    if result.degenerate:
        logger.warning(f"Degenerate evaluation: {result.flags}")
    return True
