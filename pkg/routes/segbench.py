import logging

from lab.io import export_scene, write_bench_rows, write_bench_summary
from lab.rng import derive_int
from lab.segbench import generate_split, run_benchmark
from routes.utils import RunContext
from schemas.experiment import ExperimentConfig
from schemas.segbench import BenchConfig, BenchReport

logger = logging.getLogger("coarsegrain.routes.segbench")


def benchmark(bench: BenchConfig, ctx: RunContext, prefix: str = "bench") -> BenchReport:
    """
    Run a benchmark and write its per-seed rows and per-scheme summary
    """
    for i in range(bench.seeds):
        ctx.seeds[f"train.{i}"] = derive_int(ctx.seed, "train", i)
    report = run_benchmark(bench, ctx.seed, ctx.jobs)
    write_bench_rows(ctx.path(f"{prefix}_rows.csv"), report)
    write_bench_summary(ctx.path(f"{prefix}_summary.csv"), report)
    for summary in report.summaries:
        logger.info(f"{summary.scheme}: Dice {summary.mean_dice:.4f} +- {summary.std_dice:.4f}, "
                    f"HD-95 {summary.mean_hd95:.3f}, NSD {summary.mean_nsd:.4f}")
    return report


def run(cfg: ExperimentConfig, ctx: RunContext) -> bool:
    bench = cfg.segbench
    if bench.export_scenes:
        _, test = generate_split(bench, cfg.seed, 0)
        for j, img in enumerate(test[:bench.export_scenes]):
            for path in export_scene(img, ctx.out_dir, f"scene_{j:03d}"):
                ctx.path(path.name)
    benchmark(bench, ctx)
    return True
