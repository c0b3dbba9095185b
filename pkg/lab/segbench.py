import logging

import numpy as np
from scipy.stats import binomtest

from app.deps import parallel_map
from lab.core import parameter_overhead
from lab.errors import StudyError
from lab.metrics import evaluate, mask_from_labels
from lab.rng import derive_int
from lab.scenes import FEATURE_DIM, generate_scene
from lab.segmenter import predict_mask, train_segmenter
from schemas.core import SoftmaxModel
from schemas.segbench import (LESION, BenchConfig, BenchReport, BenchRow, FinetuneConfig, FinetuneReport,
                              FinetuneRow, LabeledImage, LabelScheme, SchemeDelta, SchemeKind, SchemeSummary,
                              Segmenter, WarmStart)

logger = logging.getLogger("coarsegrain.segbench")


def generate_split(cfg: BenchConfig, seed: int, seed_index: int) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """
    Scenes of one benchmark seed, drawn from the ("scene", seed_index, j) streams and split into train and test
    """
    scenes = [generate_scene(cfg.scene, derive_int(seed, "scene", seed_index, j)) for j in range(cfg.scene_count)]
    return scenes[:cfg.train_scenes], scenes[cfg.train_scenes:]


def evaluate_segmenter(seg: Segmenter, test: list[LabeledImage], cfg: BenchConfig) -> tuple[float, float, float]:
    """
    Mean Dice, HD-95 and NSD of a segmenter over test scenes
    """
    results = [evaluate(predict_mask(seg, img, cfg.target_class), mask_from_labels(img.labels, LESION, img.spacing),
                        cfg.metrics) for img in test]
    return (float(np.mean([r.dice for r in results])), float(np.mean([r.hd95 for r in results])),
            float(np.mean([r.nsd for r in results])))


def _row(seg: Segmenter, scheme: LabelScheme, seed_index: int, cfg: BenchConfig,
         test: list[LabeledImage]) -> BenchRow:
    dice, hd, surface = evaluate_segmenter(seg, test, cfg)
    base = SoftmaxModel(feature_dim=FEATURE_DIM, class_count=2, architecture=seg.model.architecture,
                        hidden_width=seg.model.hidden_width)
    extra, _ = parameter_overhead(base, seg.model)
    return BenchRow(scheme=scheme.name, seed=seed_index, mean_dice=dice, mean_hd95=hd, mean_nsd=surface,
                    epochs=seg.epochs, batch_size=cfg.train.batch_size, converged=seg.converged,
                    class_count=seg.model.class_count, param_overhead=extra)


def _bench_seed(task: tuple[BenchConfig, int, int]) -> list[BenchRow]:
    cfg, seed, seed_index = task
    train, test = generate_split(cfg, seed, seed_index)
    train_seed = derive_int(seed, "train", seed_index)
    rows = []
    for scheme in cfg.label_schemes:
        seg = train_segmenter(train, scheme, cfg.model, cfg.train, train_seed)
        rows.append(_row(seg, scheme, seed_index, cfg, test))
        logger.debug(f"Seed {seed_index}, {scheme.name}: Dice {rows[-1].mean_dice:.4f}")
    return rows


def _std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(rows: list[BenchRow], schemes: list[str]) -> tuple[list[SchemeSummary], list[SchemeDelta]]:
    """
    Per-scheme means and standard deviations over seeds, and paired deltas against the first scheme with a one-sided
    sign test on Dice
    """
    by_scheme = {name: sorted((r for r in rows if r.scheme == name), key=lambda r: r.seed) for name in schemes}
    summaries = []
    for name, group in by_scheme.items():
        dice, hd, surface = ([getattr(r, f) for r in group] for f in ("mean_dice", "mean_hd95", "mean_nsd"))
        summaries.append(SchemeSummary(scheme=name, seeds=len(group), mean_dice=float(np.mean(dice)),
                                       std_dice=_std(dice), mean_hd95=float(np.mean(hd)), std_hd95=_std(hd),
                                       mean_nsd=float(np.mean(surface)), std_nsd=_std(surface)))

    baseline = schemes[0]
    deltas = []
    for name in schemes[1:]:
        pairs = list(zip(by_scheme[baseline], by_scheme[name]))
        diff = np.array([s.mean_dice - b.mean_dice for b, s in pairs])
        wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
        p_value = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
        deltas.append(SchemeDelta(scheme=name, baseline=baseline, dice_delta=float(diff.mean()),
                                  hd95_delta=float(np.mean([s.mean_hd95 - b.mean_hd95 for b, s in pairs])),
                                  nsd_delta=float(np.mean([s.mean_nsd - b.mean_nsd for b, s in pairs])),
                                  wins=wins, losses=losses, sign_test_p=float(p_value)))
    return summaries, deltas


def run_benchmark(cfg: BenchConfig, seed: int = 0, jobs: int = 1) -> BenchReport:
    """
    Train every scheme on every seed and evaluate on held-out scenes. Rows come back in (seed, scheme) order

    :param cfg: Benchmark configuration
    :param seed: Master seed
    :param jobs: Worker processes, one seed per task
    :return: Report with per-seed rows, per-scheme summaries and deltas against the first scheme
    """
    logger.info(f"Benchmarking {', '.join(s.name for s in cfg.label_schemes)} over {cfg.seeds} seeds "
                f"({cfg.train_scenes} train / {cfg.test_scenes} test scenes)")
    per_seed = parallel_map(_bench_seed, [(cfg, seed, i) for i in range(cfg.seeds)], jobs)
    rows = [row for group in per_seed for row in group]

    if len({(r.epochs, r.batch_size) for r in rows}) != 1:
        raise StudyError("Compared schemes were trained with different budgets")
    summaries, deltas = summarize(rows, [s.name for s in cfg.label_schemes])
    return BenchReport(rows=rows, summaries=summaries, deltas=deltas)


# FINE-TUNING #


def _finetune_seed(task: tuple[FinetuneConfig, int, int]) -> tuple[BenchRow, list[FinetuneRow]]:
    cfg, seed, seed_index = task
    bench = cfg.bench
    train, test = generate_split(bench, seed, seed_index)
    train_seed = derive_int(seed, "train", seed_index)

    target = cfg.label_scheme
    binary = LabelScheme(kind=SchemeKind.binary, aux_ids=target.aux_ids, label_noise=target.label_noise)
    base = train_segmenter(train, binary, bench.model, bench.train, train_seed)
    baseline = _row(base, binary, seed_index, bench, test)

    schedule = bench.train.model_copy(update={"epochs": cfg.checkpoints[-1]})
    finetune_seed = derive_int(seed, "finetune", seed_index)
    rows = []
    for scheme in (target, binary):
        tuned = train_segmenter(train, scheme, bench.model, schedule, finetune_seed,
                                WarmStart(source=base, lr_scale=cfg.lr_scale), cfg.checkpoints)
        for epoch in cfg.checkpoints:
            dice, hd, surface = evaluate_segmenter(tuned.at_checkpoint(epoch), test, bench)
            rows.append(FinetuneRow(seed=seed_index, scheme=scheme.name, epochs=epoch, mean_dice=dice,
                                    mean_hd95=hd, mean_nsd=surface))
    return baseline, rows


def run_finetune(cfg: FinetuneConfig, seed: int = 0, jobs: int = 1) -> FinetuneReport:
    """
    Warm-start ``cfg.scheme`` from a binary segmenter and evaluate at every checkpoint. Binary training continued
    under the same schedule is reported alongside as the control
    """
    logger.info(f"Fine-tuning {cfg.scheme} from binary over {cfg.bench.seeds} seeds, "
                f"checkpoints {list(cfg.checkpoints)}")
    results = parallel_map(_finetune_seed, [(cfg, seed, i) for i in range(cfg.bench.seeds)], jobs)
    return FinetuneReport(baseline=[b for b, _ in results], rows=[row for _, rows in results for row in rows])
