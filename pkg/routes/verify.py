import logging

from lab.io import write_checks
from lab.verify import run_suite
from routes.utils import RunContext
from schemas.experiment import ExperimentConfig

logger = logging.getLogger("coarsegrain.routes.verify")


def run(cfg: ExperimentConfig, ctx: RunContext) -> bool:
    """
    Run the identity suite and write its pass/fail table

    :return: Whether every check passed
    """
    results = run_suite(cfg.seed, cfg.verify, ctx.jobs)
    write_checks(ctx.path("verify_checks.csv"), results)
    for result in results:
        logger.info(f"{result.check}: {'pass' if result.passed else 'FAIL'} over {result.instances} instances "
                    f"(max error {result.max_error:.3e})")
    return all(result.passed for result in results)
