import logging

from lab.estimation import consistency_sweep
from lab.io import write_consistency, write_finetune_rows, write_finetune_summary
from lab.rng import derive_int
from lab.segbench import run_finetune
from routes.mle import build_problem
from routes.segbench import benchmark
from routes.utils import RunContext, emit_plot_data
from schemas.estimation import LikelihoodMode
from schemas.experiment import ExperimentConfig, PlotSeries, SweepAxis
from schemas.segbench import BenchConfig, BenchReport, FinetuneConfig, FinetuneReport

logger = logging.getLogger("coarsegrain.routes.sweep")

SCHEME_QUANTITIES = ("mean_dice", "mean_hd95", "mean_nsd")


def scheme_series(report: BenchReport, axis: SweepAxis, family: str, grid: list[float],
                  names: list[str]) -> list[PlotSeries]:
    """
    One series per metric, taking each grid value's point from the summary of the matching scheme
    """
    return [PlotSeries(axis=axis.value, name=family, quantity=quantity,
                       points=[(x, getattr(report.summary(name), quantity)) for x, name in zip(grid, names)])
            for quantity in SCHEME_QUANTITIES]


def finetune_series(report: FinetuneReport) -> list[PlotSeries]:
    return [PlotSeries(axis=SweepAxis.epochs.value, name=scheme, points=report.curve(scheme))
            for scheme in report.schemes]


def _sweep_schemes(cfg: ExperimentConfig, ctx: RunContext) -> list[PlotSeries]:
    axis = cfg.sweep.axis
    names = cfg.sweep_schemes
    bench = BenchConfig.model_validate({**cfg.segbench.model_dump(), "schemes": ["binary", *names]})
    report = benchmark(bench, ctx, prefix=f"sweep_{axis.value}")
    family = "partial" if axis is SweepAxis.aux_fraction else "aux"
    return scheme_series(report, axis, family, cfg.sweep.grid, names)


def _sweep_epochs(cfg: ExperimentConfig, ctx: RunContext) -> list[PlotSeries]:
    checkpoints = tuple(int(v) for v in cfg.sweep.grid)
    finetune = FinetuneConfig.model_validate({**cfg.finetune.model_dump(), "checkpoints": checkpoints})
    for i in range(finetune.bench.seeds):
        ctx.seeds[f"train.{i}"] = derive_int(cfg.seed, "train", i)
        ctx.seeds[f"finetune.{i}"] = derive_int(cfg.seed, "finetune", i)
    report = run_finetune(finetune, cfg.seed, ctx.jobs)
    write_finetune_rows(ctx.path("finetune_rows.csv"), report)
    write_finetune_summary(ctx.path("finetune_summary.csv"), report)
    return finetune_series(report)


def _sweep_sizes(cfg: ExperimentConfig, ctx: RunContext) -> list[PlotSeries]:
    mle = cfg.mle
    problem = build_problem(mle, cfg.seed)
    sizes = [int(v) for v in cfg.sweep.grid]
    series, points = [], []
    for mode in (LikelihoodMode.multiclass, LikelihoodMode.binary):
        curve = consistency_sweep(problem.model, problem.true_theta, problem.distribution, sizes, mle.trials, mode,
                                  mle.fit, cfg.seed, problem.probe_x, mle.target_class, ctx.jobs)
        points += curve
        series.append(PlotSeries(axis=SweepAxis.n.value, name=mode.value, quantity="mean_error",
                                 points=[(p.n, p.mean_error) for p in curve]))
    write_consistency(ctx.path("consistency.csv"), points)
    return series


SWEEPS = {
    SweepAxis.epochs: _sweep_epochs,
    SweepAxis.aux_fraction: _sweep_schemes,
    SweepAxis.aux_count: _sweep_schemes,
    SweepAxis.n: _sweep_sizes,
}


def run(cfg: ExperimentConfig, ctx: RunContext) -> bool:
    """
    Run the configured one-axis sweep and emit one plot file per series
    """
    axis = cfg.sweep.axis
    logger.info(f"Sweeping {axis.value} over {cfg.sweep.grid}")
    for series in SWEEPS[axis](cfg, ctx):
        emit_plot_data(series, ctx.path(f"plot_{axis.value}_{series.name}_{series.quantity}.csv"))
    return True
