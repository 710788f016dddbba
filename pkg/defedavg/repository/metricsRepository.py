import csv
import logging
import os
from typing import List, Optional, Sequence, Tuple

from defedavg.models.metrics import MetricsRow, RunResult, SweepCell, SweepSummary

logger = logging.getLogger(__name__)

METRICS_HEADER = ['round', 'wall_clock_s', 'train_loss', 'grad_norm_sq', 'test_acc', 'mean_staleness', 'max_staleness']
SWEEP_HEADER = ['n', 'seed', 'rounds_to_target', 'time_to_target']
UNREACHED = 'unreached'
MEAN = 'mean'


def fmt(value: Optional[float]) -> str:
    return '' if value is None else format(float(value), '.17g')


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


class MetricsRepository:

    @staticmethod
    def write_metrics_csv(result: RunResult, path: str) -> str:
        _ensure_parent(path)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(METRICS_HEADER)
            for row in result.rows:
                writer.writerow([
                    row.round,
                    fmt(row.wall_clock),
                    fmt(row.train_loss),
                    fmt(row.grad_norm_sq),
                    fmt(row.test_accuracy),
                    fmt(row.mean_staleness),
                    row.max_staleness,
                ])
        logger.info(f'Wrote {len(result.rows)} metrics rows to {path}')
        return path

    @staticmethod
    def read_metrics_csv(path: str) -> List[MetricsRow]:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != METRICS_HEADER:
                raise ValueError(f'{path}: unexpected header {reader.fieldnames}')
            return [
                MetricsRow(
                    round=int(r['round']),
                    wall_clock=float(r['wall_clock_s']),
                    train_loss=float(r['train_loss']),
                    grad_norm_sq=float(r['grad_norm_sq']),
                    test_accuracy=float(r['test_acc']) if r['test_acc'] else None,
                    mean_staleness=float(r['mean_staleness']),
                    max_staleness=int(r['max_staleness']),
                )
                for r in reader
            ]

    @staticmethod
    def write_sweep_csv(cells: Sequence[SweepCell], summaries: Sequence[SweepSummary], path: str) -> str:
        """Per-seed rows sorted by (n, seed), each n followed by its mean row."""
        _ensure_parent(path)
        by_n = {s.n: s for s in summaries}
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(SWEEP_HEADER)
            for n in sorted({c.n for c in cells}):
                for cell in sorted((c for c in cells if c.n == n), key=lambda c: c.seed):
                    writer.writerow([
                        cell.n,
                        cell.seed,
                        cell.rounds_to_target if cell.reached else UNREACHED,
                        fmt(cell.time_to_target) if cell.reached else UNREACHED,
                    ])
                summary = by_n.get(n)
                if summary is not None:
                    writer.writerow([
                        n,
                        MEAN,
                        fmt(summary.mean_rounds) if summary.mean_rounds is not None else UNREACHED,
                        fmt(summary.mean_time) if summary.mean_time is not None else UNREACHED,
                    ])
        logger.info(f'Wrote sweep table ({len(cells)} cells) to {path}')
        return path

    @staticmethod
    def read_sweep_csv(path: str) -> Tuple[List[SweepCell], List[SweepSummary]]:
        cells: List[SweepCell] = []
        means: List[Tuple[int, Optional[float], Optional[float]]] = []
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != SWEEP_HEADER:
                raise ValueError(f'{path}: unexpected header {reader.fieldnames}')
            for r in reader:
                rounds, time = r['rounds_to_target'], r['time_to_target']
                if r['seed'] == MEAN:
                    means.append((
                        int(r['n']),
                        None if rounds == UNREACHED else float(rounds),
                        None if time == UNREACHED else float(time),
                    ))
                    continue
                cells.append(SweepCell(
                    n=int(r['n']),
                    seed=int(r['seed']),
                    rounds_to_target=None if rounds == UNREACHED else int(rounds),
                    time_to_target=None if time == UNREACHED else float(time),
                ))
        summaries = []
        for n, mean_rounds, mean_time in means:
            group = [c for c in cells if c.n == n]
            summaries.append(SweepSummary(n, len(group), sum(c.reached for c in group), mean_rounds, mean_time))
        return cells, summaries
