import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from defedavg.config import Config
from defedavg.errors import ConfigError
from defedavg.models.metrics import SweepCell, SweepSummary
from defedavg.models.run_config import RunConfig
from defedavg.services.simulator_service import FederatedSimulation, prepare
from defedavg.services.target_service import Target, first_hit, resolve_target

logger = logging.getLogger(__name__)

ETA_GRID = (0.1, 1.0)
ETA_BAR_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)


def parse_seeds(text: str) -> List[int]:
    """Accepts ``1..10`` ranges, comma lists, or a mix: ``1,3,5..7``."""
    seeds: List[int] = []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        if '..' in part:
            low, high = (int(p) for p in part.split('..', 1))
            if high < low:
                raise ConfigError(f'empty seed range {part!r}')
            seeds.extend(range(low, high + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError(f'no seeds in {text!r}')
    return seeds


def parse_int_list(text: str) -> List[int]:
    try:
        values = [int(p) for p in text.split(',') if p.strip()]
    except ValueError:
        raise ConfigError(f'expected a comma-separated integer list, got {text!r}')
    if not values:
        raise ConfigError(f'empty list {text!r}')
    return values


def run_cell(base: RunConfig, n: int, seed: int, target: Target) -> SweepCell:
    config, problem = prepare(base.with_overrides(n=n, seed=seed))
    result = FederatedSimulation(config, problem).run()
    hit = first_hit(result.rows, target, result.f_star)
    if hit is None:
        logger.warning(f'n={n} seed={seed}: target {target.describe()} unreached within T={config.T}')
        return SweepCell(n, seed, None, None)
    logger.info(f'n={n} seed={seed}: reached {target.describe()} at round {hit.round} ({hit.wall_clock:.6g}s)')
    return SweepCell(n, seed, hit.round, hit.wall_clock)


def summarize(cells: Sequence[SweepCell]) -> List[SweepSummary]:
    """Mean over seeds per n; a mean is only reported when every seed reached the target."""
    summaries = []
    for n in sorted({c.n for c in cells}):
        group = [c for c in cells if c.n == n]
        reached = [c for c in group if c.reached]
        if len(reached) == len(group):
            mean_rounds = float(np.mean([c.rounds_to_target for c in group]))
            mean_time = float(np.mean([c.time_to_target for c in group]))
        else:
            mean_rounds = mean_time = None
        summaries.append(SweepSummary(n, len(group), len(reached), mean_rounds, mean_time))
    return summaries


@dataclass
class SweepTable:
    target: Target
    cells: List[SweepCell]
    summaries: List[SweepSummary]

    def summary(self, n: int) -> SweepSummary:
        for s in self.summaries:
            if s.n == n:
                return s
        raise KeyError(n)


def _validate(base: RunConfig, n_values: Sequence[int], seeds: Sequence[int]) -> None:
    if not n_values:
        raise ConfigError('sweep needs at least one n value')
    if not seeds:
        raise ConfigError('sweep needs at least one seed')
    for n in n_values:
        if not 1 <= n <= base.N:
            raise ConfigError(f'sweep value n={n} must lie in [1, N={base.N}]')


def run_cells(jobs: Sequence[Tuple[RunConfig, int, int]], target: Target, workers: int) -> List[SweepCell]:
    if workers <= 1 or len(jobs) == 1:
        return [run_cell(config, n, seed, target) for config, n, seed in jobs]
    cells = []
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run_cell, config, n, seed, target) for config, n, seed in jobs]
        for future in as_completed(futures):
            cells.append(future.result())
    return cells


def sweep(base: RunConfig, n_values: Sequence[int], seeds: Sequence[int],
          workers: Optional[int] = None) -> SweepTable:
    _validate(base, n_values, seeds)
    target = resolve_target(base)
    workers = Config.WORKERS if workers is None else workers
    logger.info(f'Sweep over n={list(n_values)} seeds={list(seeds)} target {target.describe()} workers={workers}')
    jobs = [(base, n, seed) for n in n_values for seed in seeds]
    cells = sorted(run_cells(jobs, target, workers), key=lambda c: (c.n, c.seed))
    return SweepTable(target, cells, summarize(cells))


@dataclass
class TuneReport:
    target: Target
    trials: Dict[Tuple[int, float, float], SweepSummary] = field(default_factory=dict)

    def best(self, n: int) -> Optional[Tuple[float, float, float]]:
        """(eta, eta_bar, mean time) with the smallest fully-reached mean time for this n."""
        options = [
            (s.mean_time, eta, eta_bar)
            for (m, eta, eta_bar), s in self.trials.items()
            if m == n and s.mean_time is not None
        ]
        if not options:
            return None
        mean_time, eta, eta_bar = min(options)
        return eta, eta_bar, mean_time


def grid_search(base: RunConfig, n_values: Sequence[int], seeds: Sequence[int],
                etas: Sequence[float] = ETA_GRID, eta_bars: Sequence[float] = ETA_BAR_GRID,
                workers: Optional[int] = None) -> TuneReport:
    _validate(base, n_values, seeds)
    target = resolve_target(base)
    workers = Config.WORKERS if workers is None else workers
    report = TuneReport(target)
    for eta in etas:
        for eta_bar in eta_bars:
            config = base.with_overrides(eta=eta, eta_bar=eta_bar)
            jobs = [(config, n, seed) for n in n_values for seed in seeds]
            cells = sorted(run_cells(jobs, target, workers), key=lambda c: (c.n, c.seed))
            for summary in summarize(cells):
                report.trials[(summary.n, eta, eta_bar)] = summary
    for n in n_values:
        best = report.best(n)
        if best is None:
            logger.warning(f'n={n}: no grid point reached {target.describe()}')
        else:
            logger.info(f'n={n}: best eta={best[0]} eta_bar={best[1]} mean time {best[2]:.6g}s')
    return report
