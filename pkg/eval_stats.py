"""
Evaluation statistics over fuzzing trial data.

Trial data is read from line-oriented event logs, one file per trial:

    <series_dir>/<corpus>/<target>/<trial>.log

Each line is `elapsed,metric,value` where metric is one of bugs_reached,
bugs_triggered or coverage. Lines starting with `#` are ignored. Any fuzzer's
monitor output can be converted to this form.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from scipy import stats

from exceptions import DegenerateSample, InsufficientSamples, StatsError, TrialSeriesError

console = Console(stderr=True)

METRICS = ("bugs_reached", "bugs_triggered", "coverage")
DIRECTIONS = ("greater", "less", "two-sided")
EXACT_MAX_N = 25


@dataclass(frozen=True)
class TrialSeries:
    """One fuzzing trial: (elapsed, bugs_reached, bugs_triggered, coverage) points."""

    corpus: str
    target: str
    trial: int
    points: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        previous = None
        for point in self.points:
            if len(point) != 4:
                raise TrialSeriesError(f"{self.label}: expected 4 fields per point, got {len(point)}")
            if previous is not None:
                if point[0] <= previous[0]:
                    raise TrialSeriesError(f"{self.label}: timestamps must be strictly increasing "
                                           f"({previous[0]} then {point[0]})")
                for name, old, new in zip(METRICS, previous[1:], point[1:]):
                    if new < old:
                        raise TrialSeriesError(f"{self.label}: {name} decreased from {old} to {new} "
                                               f"at {point[0]}s")
            previous = point

    @property
    def label(self) -> str:
        return f"{self.corpus}/{self.target}/{self.trial}"

    def final(self, metric: str) -> float:
        if not self.points:
            return 0.0
        return self.points[-1][1 + METRICS.index(metric)]

    def value_at(self, elapsed: float, metric: str) -> float:
        """Step-function value: the last observation at or before `elapsed`."""
        times = [p[0] for p in self.points]
        index = int(np.searchsorted(times, elapsed, side="right")) - 1
        if index < 0:
            return 0.0
        return self.points[index][1 + METRICS.index(metric)]


@dataclass(frozen=True)
class PairedSample:
    """Per-target paired values (x_t, y_t) for two corpora."""

    targets: tuple[str, ...]
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.targets) == len(self.x) == len(self.y)):
            raise StatsError("Paired sample columns must have equal lengths")
        if len(set(self.targets)) != len(self.targets):
            raise StatsError("Paired sample targets must be unique")

    @classmethod
    def from_mappings(cls, x: dict[str, float], y: dict[str, float]) -> "PairedSample":
        if set(x) != set(y):
            missing = sorted(set(x) ^ set(y))
            raise StatsError(f"Targets are not paired: {', '.join(missing)}")
        targets = tuple(sorted(x))
        return cls(targets, tuple(float(x[t]) for t in targets), tuple(float(y[t]) for t in targets))

    def differences(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float) - np.asarray(self.y, dtype=float)

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str
    direction: str


def _signed_ranks(pairs: PairedSample) -> tuple[np.ndarray, np.ndarray]:
    differences = pairs.differences()
    nonzero = differences[differences != 0]
    if nonzero.size == 0:
        raise DegenerateSample("All paired differences are zero")
    ranks = stats.rankdata(np.abs(nonzero))
    return nonzero, ranks


def _exact_distribution(ranks: np.ndarray) -> np.ndarray:
    """Counts of each doubled W+ value over all 2^n sign assignments."""
    doubled = np.rint(ranks * 2).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    return counts


def _exact_p(w_plus: float, ranks: np.ndarray, direction: str) -> float:
    counts = _exact_distribution(ranks)
    total = float(2 ** ranks.size)
    observed = int(round(w_plus * 2))
    upper = counts[observed:].sum() / total
    lower = counts[: observed + 1].sum() / total
    if direction == "greater":
        return float(upper)
    if direction == "less":
        return float(lower)
    return float(min(1.0, 2 * min(upper, lower)))


def _approx_p(w_plus: float, ranks: np.ndarray, direction: str) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24 - float(((tie_counts ** 3) - tie_counts).sum()) / 48
    if variance <= 0:
        raise DegenerateSample("Signed-rank variance is zero")
    sd = math.sqrt(variance)
    upper = stats.norm.sf((w_plus - mean - 0.5) / sd)
    lower = stats.norm.cdf((w_plus - mean + 0.5) / sd)
    if direction == "greater":
        p = upper
    elif direction == "less":
        p = lower
    else:
        p = 2 * min(upper, lower)
    return float(min(1.0, max(p, np.finfo(float).tiny)))


def wilcoxon_test(pairs: PairedSample, direction: str = "greater", method: str = "auto") -> WilcoxonResult:
    """Signed-rank test of median(X) vs median(Y).

    Zero differences are dropped before ranking and tied magnitudes get average
    ranks. With n <= 25 nonzero differences the p-value is exact (full
    enumeration of sign assignments), above that a normal approximation with
    continuity and tie corrections is used. `method` forces either path.
    """
    if direction not in DIRECTIONS:
        raise StatsError(f"Direction must be one of {', '.join(DIRECTIONS)}")
    if method not in ("auto", "exact", "approx"):
        raise StatsError("Method must be auto, exact or approx")
    differences, ranks = _signed_ranks(pairs)
    w_plus = float(ranks[differences > 0].sum())
    if method == "auto":
        method = "exact" if ranks.size <= EXACT_MAX_N else "approx"
    if method == "exact":
        p = _exact_p(w_plus, ranks, direction)
    else:
        p = _approx_p(w_plus, ranks, direction)
    return WilcoxonResult(statistic=w_plus, p_value=p, n=int(ranks.size), method=method, direction=direction)


def wilcoxon_one_sided(pairs: PairedSample, direction: str = "greater", method: str = "auto") -> float:
    return wilcoxon_test(pairs, direction, method).p_value


def confidence_interval_95(samples) -> tuple[float, float]:
    """Student-t 95% interval for the mean."""
    values = np.asarray(list(samples), dtype=float)
    if values.size < 2:
        raise InsufficientSamples(f"Need at least 2 samples for a confidence interval, got {values.size}")
    mean = float(values.mean())
    half_width = float(stats.t.ppf(0.975, values.size - 1) * values.std(ddof=1) / math.sqrt(values.size))
    return mean - half_width, mean + half_width


@dataclass
class NormalizedCoverage:
    series: list[TrialSeries]
    baselines: dict[str, float]
    errors: dict[str, str] = field(default_factory=dict)


def baseline_finals(baseline: list[TrialSeries]) -> dict[str, float]:
    finals: dict[str, list[float]] = {}
    for trial in baseline:
        finals.setdefault(trial.target, []).append(trial.final("coverage"))
    return {target: float(np.mean(values)) for target, values in finals.items()}


def normalize_coverage(series: list[TrialSeries], baseline: list[TrialSeries]) -> NormalizedCoverage:
    """Divide every coverage point by the baseline corpus's mean final coverage for the same target."""
    finals = baseline_finals(baseline)
    result = NormalizedCoverage(series=[], baselines=finals)
    for trial in series:
        reference = finals.get(trial.target)
        if reference is None:
            result.errors[trial.target] = "no baseline trials for this target"
            continue
        if reference <= 0:
            result.errors[trial.target] = f"baseline final coverage is {reference}"
            continue
        points = tuple((t, reached, triggered, coverage / reference)
                       for t, reached, triggered, coverage in trial.points)
        result.series.append(replace(trial, points=points))
    for target, message in sorted(result.errors.items()):
        console.print(f"[yellow]Coverage not normalized for {target}: {message}[/yellow]")
    return result


def parse_event_log(path: Path, corpus: str, target: str, trial: int) -> TrialSeries:
    """Read one `elapsed,metric,value` log into a TrialSeries.

    Metrics missing at a timestamp carry their previous value forward, and
    start at 0 before their first observation.
    """
    try:
        events = pd.read_csv(path, header=None, names=["elapsed", "metric", "value"],
                             comment="#", skipinitialspace=True)
    except (OSError, pd.errors.ParserError) as e:
        raise TrialSeriesError(f"Cannot read {path}: {e}") from e
    except pd.errors.EmptyDataError:
        return TrialSeries(corpus, target, trial, ())

    unknown = sorted(set(events["metric"]) - set(METRICS))
    if unknown:
        raise TrialSeriesError(f"{path}: unknown metrics {', '.join(map(str, unknown))}")
    try:
        events["elapsed"] = pd.to_numeric(events["elapsed"])
        events["value"] = pd.to_numeric(events["value"])
    except ValueError as e:
        raise TrialSeriesError(f"{path}: {e}") from e

    table = (
        events.pivot_table(index="elapsed", columns="metric", values="value", aggfunc="max")
        .reindex(columns=list(METRICS))
        .sort_index()
        .ffill()
        .fillna(0)
    )
    points = tuple(
        (float(elapsed), float(row["bugs_reached"]), float(row["bugs_triggered"]), float(row["coverage"]))
        for elapsed, row in table.iterrows()
    )
    return TrialSeries(corpus, target, trial, points)


def load_series_dir(directory: Path) -> list[TrialSeries]:
    """Load every <corpus>/<target>/<trial>.log under a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise StatsError(f"Series directory {directory} does not exist")
    series = []
    for path in sorted(directory.glob("*/*/*.log")):
        target_dir = path.parent
        try:
            trial = int(path.stem)
        except ValueError:
            console.print(f"[yellow]Skipping {path}: trial file names must be integers[/yellow]")
            continue
        series.append(parse_event_log(path, target_dir.parent.name, target_dir.name, trial))
    if not series:
        raise StatsError(f"No trial logs found under {directory}")
    console.print(f"[blue]Loaded {len(series)} trials from {directory}[/blue]")
    return series


def load_pairs_file(path: Path) -> PairedSample:
    """CSV with columns target,x,y."""
    try:
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise StatsError(f"Cannot read pairs file {path}: {e}") from e
    missing = {"target", "x", "y"} - set(frame.columns)
    if missing:
        raise StatsError(f"Pairs file {path} lacks columns: {', '.join(sorted(missing))}")
    return PairedSample(
        targets=tuple(str(t) for t in frame["target"]),
        x=tuple(float(v) for v in frame["x"]),
        y=tuple(float(v) for v in frame["y"]),
    )


def _interval(values: list[float]) -> tuple[float, float]:
    """(mean, half-width); half-width is NaN for a single trial."""
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, float("nan")
    low, high = confidence_interval_95(values)
    return mean, (high - low) / 2


def _group(series: list[TrialSeries]) -> dict[tuple[str, str], list[TrialSeries]]:
    groups: dict[tuple[str, str], list[TrialSeries]] = {}
    for trial in series:
        groups.setdefault((trial.corpus, trial.target), []).append(trial)
    return dict(sorted(groups.items()))


def summary_table(series: list[TrialSeries]) -> pd.DataFrame:
    """Mean final value and 95% CI half-width per corpus x target."""
    rows = []
    for (corpus, target), trials in _group(series).items():
        row = {"corpus": corpus, "target": target, "trials": len(trials)}
        for metric in METRICS:
            mean, half_width = _interval([t.final(metric) for t in trials])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_ci95"] = half_width
        rows.append(row)
    return pd.DataFrame(rows)


def timeseries_table(series: list[TrialSeries], step: float = 3600.0) -> pd.DataFrame:
    """Mean and CI of each measure on a regular time grid, per corpus x target."""
    if step <= 0:
        raise StatsError("Time step must be positive")
    horizon = max((t.points[-1][0] for t in series if t.points), default=0.0)
    grid = np.arange(0.0, horizon + step, step)
    rows = []
    for (corpus, target), trials in _group(series).items():
        for elapsed in grid:
            row = {"corpus": corpus, "target": target, "elapsed": float(elapsed)}
            for metric in METRICS:
                mean, half_width = _interval([t.value_at(elapsed, metric) for t in trials])
                row[f"{metric}_mean"] = mean
                row[f"{metric}_ci95"] = half_width
            rows.append(row)
    return pd.DataFrame(rows)


def normalized_table(result: NormalizedCoverage) -> pd.DataFrame:
    rows = []
    for (corpus, target), trials in _group(result.series).items():
        mean, half_width = _interval([t.final("coverage") for t in trials])
        rows.append({"corpus": corpus, "target": target, "baseline_final_coverage": result.baselines[target],
                     "normalized_coverage_mean": mean, "normalized_coverage_ci95": half_width, "error": ""})
    for target, message in sorted(result.errors.items()):
        rows.append({"corpus": "", "target": target, "baseline_final_coverage": float("nan"),
                     "normalized_coverage_mean": float("nan"), "normalized_coverage_ci95": float("nan"),
                     "error": message})
    return pd.DataFrame(rows)


def paired_finals(series: list[TrialSeries], corpus_x: str, corpus_y: str, metric: str,
                  aggregate: str = "mean") -> PairedSample:
    """Pair two corpora by target, aggregating final values over trials (mean or median)."""
    reducer = {"mean": np.mean, "median": np.median}.get(aggregate)
    if reducer is None:
        raise StatsError("Aggregate must be mean or median")
    values: dict[str, dict[str, list[float]]] = {corpus_x: {}, corpus_y: {}}
    for trial in series:
        if trial.corpus in values:
            values[trial.corpus].setdefault(trial.target, []).append(trial.final(metric))
    shared = sorted(set(values[corpus_x]) & set(values[corpus_y]))
    unpaired = sorted(set(values[corpus_x]) ^ set(values[corpus_y]))
    if unpaired:
        console.print(f"[yellow]{corpus_x} vs {corpus_y}: unpaired targets skipped: {', '.join(unpaired)}[/yellow]")
    return PairedSample(
        targets=tuple(shared),
        x=tuple(float(reducer(values[corpus_x][t])) for t in shared),
        y=tuple(float(reducer(values[corpus_y][t])) for t in shared),
    )


def wilcoxon_row(label_x: str, label_y: str, metric: str, pairs: PairedSample, direction: str) -> dict:
    row = {"x": label_x, "y": label_y, "metric": metric, "targets": len(pairs), "direction": direction}
    try:
        result = wilcoxon_test(pairs, direction)
    except StatsError as e:
        return {**row, "n": 0, "statistic": float("nan"), "p_value": float("nan"), "method": "", "error": str(e)}
    return {**row, "n": result.n, "statistic": result.statistic, "p_value": result.p_value,
            "method": result.method, "error": ""}


def wilcoxon_table(series: list[TrialSeries], comparisons: list[tuple[str, str]], direction: str = "greater",
                   aggregate: str = "mean") -> pd.DataFrame:
    rows = []
    for corpus_x, corpus_y in comparisons:
        for metric in METRICS:
            pairs = paired_finals(series, corpus_x, corpus_y, metric, aggregate)
            rows.append(wilcoxon_row(corpus_x, corpus_y, metric, pairs, direction))
    return pd.DataFrame(rows)
