import csv
import hashlib
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from lab.errors import InvalidInputError, ReportIOError
from schemas.estimation import ConsistencyPoint, EfficiencyReport, MLEStudy
from schemas.experiment import RunManifest
from schemas.metrics import MetricsResult
from schemas.segbench import BenchReport, FinetuneReport, LabeledImage
from schemas.verify import CheckResult

logger = logging.getLogger("coarsegrain.io")

# Scientific notation with 17 significant digits, enough to round-trip any double
FLOAT_FORMAT = "{:.16e}"


def format_cell(value: Any) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a CSV report with '\\n' line endings and every float at full precision, so equal inputs give equal bytes

    :param path: Output file
    :param header: Column names
    :param rows: Row values, formatted with ``format_cell``
    :return: The written path
    """
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_cell(v) for v in row])
    except OSError as e:
        raise ReportIOError(f"Could not write {path}: {e.strerror or e}")
    logger.debug(f"Wrote {path}")
    return path


# REPORTS #


def write_trials(path: Path, study: MLEStudy) -> Path:
    header = ["trial_id", "converged", "tau_hat"] + [f"theta_{i}" for i in range(study.model.param_count)]
    rows = ([r.trial, r.converged, r.tau_hat, *r.theta_hat.tolist()] for r in study.records)
    return write_csv(path, header, rows)


def write_efficiency_summary(path: Path, report: EfficiencyReport) -> Path:
    header = ["arm", "n", "trials", "empirical_var_tau", "theoretical_var_tau", "ratio", "ci_low", "ci_high",
              "verdict"]
    rows = ([arm.mode, arm.n, arm.trials - arm.excluded, arm.empirical_var_tau, arm.theoretical_var_tau,
             report.ratio, report.ci_low, report.ci_high, report.verdict] for arm in report.arms)
    return write_csv(path, header, rows)


def write_bench_rows(path: Path, report: BenchReport) -> Path:
    header = ["scheme", "seed", "mean_dice", "mean_hd95", "mean_nsd", "epochs", "converged"]
    rows = ([r.scheme, r.seed, r.mean_dice, r.mean_hd95, r.mean_nsd, r.epochs, r.converged] for r in report.rows)
    return write_csv(path, header, rows)


def write_bench_summary(path: Path, report: BenchReport) -> Path:
    header = ["scheme", "seeds", "mean_dice", "std_dice", "mean_hd95", "std_hd95", "mean_nsd", "std_nsd",
              "baseline", "dice_delta", "wins", "losses", "sign_test_p", "param_overhead"]
    deltas = {d.scheme: d for d in report.deltas}
    overhead = {r.scheme: r.param_overhead for r in report.rows}
    rows = []
    for s in report.summaries:
        d = deltas.get(s.scheme)
        comparison = [d.baseline, d.dice_delta, d.wins, d.losses, d.sign_test_p] if d else ["", "", "", "", ""]
        rows.append([s.scheme, s.seeds, s.mean_dice, s.std_dice, s.mean_hd95, s.std_hd95, s.mean_nsd, s.std_nsd,
                     *comparison, overhead[s.scheme]])
    return write_csv(path, header, rows)


def write_finetune_rows(path: Path, report: FinetuneReport) -> Path:
    header = ["scheme", "seed", "epochs", "mean_dice", "mean_hd95", "mean_nsd"]
    rows = [[r.scheme, r.seed, r.epochs, r.mean_dice, r.mean_hd95, r.mean_nsd] for r in report.rows]
    rows += [[r.scheme, r.seed, 0, r.mean_dice, r.mean_hd95, r.mean_nsd] for r in report.baseline]
    return write_csv(path, header, rows)


def write_finetune_summary(path: Path, report: FinetuneReport) -> Path:
    rows = ([scheme, epochs, dice] for scheme in report.schemes for epochs, dice in report.curve(scheme))
    return write_csv(path, ["scheme", "epochs", "mean_dice"], rows)


def write_consistency(path: Path, points: Sequence[ConsistencyPoint]) -> Path:
    header = ["n", "mode", "trials", "excluded", "mean_error", "bias_norm"]
    rows = ([p.n, p.mode, p.trials, p.excluded, p.mean_error, p.bias_norm] for p in points)
    return write_csv(path, header, rows)


def write_checks(path: Path, results: Sequence[CheckResult]) -> Path:
    header = ["check", "instances", "max_error", "tolerance", "passed", "detail"]
    rows = ([r.check, r.instances, r.max_error, r.tolerance, r.passed, r.detail] for r in results)
    return write_csv(path, header, rows)


METRICS_HEADER = ["dice", "hd95", "nsd", "flags"]


def metrics_row(result: MetricsResult) -> str:
    """
    Single CSV data row of a metric evaluation
    """
    return ",".join([format_cell(result.dice), format_cell(result.hd95), format_cell(result.nsd), result.flags])


def write_metrics(path: Path, result: MetricsResult) -> Path:
    return write_csv(path, METRICS_HEADER, [[result.dice, result.hd95, result.nsd, result.flags]])


# MATRICES AND GRIDS #


def write_matrix(path: Path, matrix: np.ndarray) -> Path:
    """
    Row-major CSV of a matrix, no header
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    path = Path(path)
    try:
        np.savetxt(path, matrix, fmt="%.16e", delimiter=",")
    except OSError as e:
        raise ReportIOError(f"Could not write {path}: {e.strerror or e}")
    return path


def _load(path: Path, what: str, **kwargs) -> np.ndarray:
    path = Path(path)
    try:
        data = np.loadtxt(path, ndmin=2, **kwargs)
    except OSError as e:
        raise ReportIOError(f"Could not read {what} {path}: {e.strerror or e}")
    except ValueError as e:
        raise InvalidInputError(f"Malformed {what} {path}: {e}")
    if data.size == 0:
        raise InvalidInputError(f"{what.capitalize()} {path} is empty")
    return data


def read_matrix(path: Path) -> np.ndarray:
    matrix = _load(path, "matrix", delimiter=",", dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError(f"Matrix {path} has non-finite entries")
    return matrix


def read_label_grid(path: Path) -> np.ndarray:
    """
    Integer label grid, one whitespace-separated row per image row

    :param path: Grid file
    :return: (H, W) int64 labels
    """
    return _load(path, "label grid", dtype=np.int64)


def export_scene(img: LabeledImage, directory: Path, stem: str) -> tuple[Path, Path]:
    """
    Write a scene as paired text grids ``<stem>_intensities.txt`` and ``<stem>_labels.txt``
    """
    directory = Path(directory)
    intensities = directory / f"{stem}_intensities.txt"
    labels = directory / f"{stem}_labels.txt"
    try:
        np.savetxt(intensities, img.intensities, fmt="%.16e", delimiter=" ")
        np.savetxt(labels, img.labels, fmt="%d", delimiter=" ")
    except OSError as e:
        raise ReportIOError(f"Could not export scene {stem}: {e.strerror or e}")
    return intensities, labels


# MANIFEST #


def checksum(path: Path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for block in iter(lambda: f.read(1 << 16), b""):
                digest.update(block)
    except OSError as e:
        raise ReportIOError(f"Could not read {path}: {e.strerror or e}")
    return digest.hexdigest()


def manifest_lines(manifest: RunManifest) -> list[str]:
    lines = [f"status = {manifest.status.value}", f"version = {manifest.version}", f"command = {manifest.command}"]
    if manifest.exit_code is not None:
        lines.append(f"exit_code = {manifest.exit_code}")
    lines += [f"config.{key} = {value}" for key, value in manifest.config.items()]
    lines += [f"seed.{name} = {value}" for name, value in sorted(manifest.seeds.items())]
    lines += [f"output.{name} = sha256:{digest}" for name, digest in sorted(manifest.outputs.items())]
    return lines


def write_manifest(path: Path, manifest: RunManifest) -> Path:
    """
    Write the manifest through a temporary file and an atomic rename, so readers never see a partial manifest
    """
    path = Path(path)
    partial = path.with_name(path.name + ".tmp")
    try:
        partial.write_text("\n".join(manifest_lines(manifest)) + "\n", encoding="utf-8")
        os.replace(partial, path)
    except OSError as e:
        partial.unlink(missing_ok=True)
        raise ReportIOError(f"Could not write manifest {path}: {e.strerror or e}")
    return path


def read_manifest(path: Path) -> dict[str, str]:
    """
    Key to value mapping of a written manifest
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Could not read manifest {path}: {e.strerror or e}")
    entries = {}
    for line in text.splitlines():
        key, _, value = line.partition(" = ")
        entries[key] = value
    return entries
