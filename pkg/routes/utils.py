import logging
from pathlib import Path
from typing import Callable

from app.config import get_settings
from app.deps import ensure_writable_dir
from lab.config_text import flatten_config
from lab.errors import LabException
from lab.io import checksum, write_csv, write_manifest
from schemas.experiment import ExperimentConfig, ManifestStatus, PlotSeries, RunManifest

logger = logging.getLogger("coarsegrain.routes")

MANIFEST_NAME = "manifest.txt"


class RunContext:
    """
    Where a run writes and what it has written so far. Every report goes through ``path`` so the manifest can
    checksum it
    """

    def __init__(self, out_dir: Path, jobs: int, seed: int):
        self.out_dir = out_dir
        self.jobs = jobs
        self.seed = seed
        self.seeds: dict[str, int] = {"master": seed}
        self.outputs: list[Path] = []

    def path(self, name: str) -> Path:
        path = self.out_dir / name
        if path not in self.outputs:
            self.outputs.append(path)
        return path


Route = Callable[[ExperimentConfig, RunContext], bool]


def emit_plot_data(series: PlotSeries, path: Path) -> Path:
    """
    Write one series as a two-column CSV whose header names the sweep axis and the plotted quantity

    :param series: Data series
    :param path: Output file
    :return: The written path
    """
    logger.debug(f"Plot series {series.name}: {len(series.points)} points")
    return write_csv(path, [series.axis, series.quantity], series.points)


def _manifest(cfg: ExperimentConfig, command: str, ctx: RunContext, status: ManifestStatus,
              exit_code: int | None) -> RunManifest:
    outputs = {} if status is ManifestStatus.running else \
        {p.name: checksum(p) for p in ctx.outputs if p.exists()}
    return RunManifest(status=status, command=command, config=flatten_config(cfg), seeds=ctx.seeds,
                       outputs=outputs, exit_code=exit_code)


def run_experiment(cfg: ExperimentConfig, route: Route, command: str, jobs: int = 1) -> int:
    """
    Run one experiment inside its manifest: the output directory is checked first, the manifest is written with
    status ``running`` and finalized with the output checksums once the route returns or fails

    :param cfg: Experiment configuration
    :param route: Handler of the experiment kind; returns False when an assertion of the run failed
    :param command: Subcommand name recorded in the manifest
    :param jobs: Worker processes
    :return: Exit status, 0 when every assertion passed
    """
    out_dir = ensure_writable_dir(Path(cfg.out_dir or get_settings().out_dir))
    ctx = RunContext(out_dir, jobs, cfg.seed)
    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(manifest_path, _manifest(cfg, command, ctx, ManifestStatus.running, None))

    try:
        passed = route(cfg, ctx)
    except LabException as e:
        write_manifest(manifest_path, _manifest(cfg, command, ctx, ManifestStatus.failed, e.exit_code))
        raise

    exit_code = 0 if passed else 1
    status = ManifestStatus.complete if passed else ManifestStatus.failed
    write_manifest(manifest_path, _manifest(cfg, command, ctx, status, exit_code))
    logger.info(f"{command} finished with status {status.value}; {len(ctx.outputs)} reports in {out_dir}")
    return exit_code
