"""Tests for signed-rank tests, confidence intervals and coverage normalization."""

import itertools
import json
import math
import random
import sys
from pathlib import Path

import pandas as pd
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent.parent))

import seedforge
from eval_stats import (
    PairedSample,
    TrialSeries,
    confidence_interval_95,
    load_pairs_file,
    load_series_dir,
    normalize_coverage,
    paired_finals,
    parse_event_log,
    summary_table,
    timeseries_table,
    wilcoxon_one_sided,
    wilcoxon_table,
    wilcoxon_test,
)
from exceptions import DegenerateSample, InsufficientSamples, StatsError, TrialSeriesError

SAMPLE_LOG = """\
# elapsed,metric,value
0,coverage,100
0,bugs_reached,0
60,coverage,150
60,bugs_reached,1
120,bugs_triggered,1
180,coverage,200
"""


def pairs_from_differences(differences) -> PairedSample:
    targets = tuple(f"t{i}" for i in range(len(differences)))
    return PairedSample(targets, tuple(float(d) for d in differences), tuple(0.0 for _ in differences))


def enumeration_oracle(differences, direction: str) -> float:
    """P-value by listing every sign vector over the nonzero differences."""
    nonzero = [d for d in differences if d != 0]
    magnitudes = sorted(abs(d) for d in nonzero)
    ranks = {}
    for value in set(magnitudes):
        positions = [i + 1 for i, m in enumerate(magnitudes) if m == value]
        ranks[value] = sum(positions) / len(positions)
    rank_list = [ranks[abs(d)] for d in nonzero]
    observed = sum(r for r, d in zip(rank_list, nonzero) if d > 0)
    totals = [sum(r for r, s in zip(rank_list, signs) if s)
              for signs in itertools.product((False, True), repeat=len(nonzero))]
    upper = sum(1 for t in totals if t >= observed - 1e-9) / len(totals)
    lower = sum(1 for t in totals if t <= observed + 1e-9) / len(totals)
    if direction == "greater":
        return upper
    if direction == "less":
        return lower
    return min(1.0, 2 * min(upper, lower))


def series(corpus, target, trial, points) -> TrialSeries:
    return TrialSeries(corpus, target, trial, tuple(points))


class TestWilcoxon:
    def test_all_equal_pairs_are_degenerate(self):
        pairs = PairedSample(("a", "b", "c"), (3.0, 4.0, 5.0), (3.0, 4.0, 5.0))
        with pytest.raises(DegenerateSample):
            wilcoxon_one_sided(pairs, "greater")

    def test_five_positive_differences(self):
        assert wilcoxon_one_sided(pairs_from_differences([1, 2, 3, 4, 5]), "greater") == 0.03125

    def test_five_positive_differences_less(self):
        assert wilcoxon_one_sided(pairs_from_differences([1, 2, 3, 4, 5]), "less") == 1.0

    def test_matches_enumeration_oracle(self):
        rng = random.Random(8)
        for _ in range(500):
            n = rng.randrange(1, 11)
            differences = [rng.randrange(-6, 7) for _ in range(n)]
            if all(d == 0 for d in differences):
                continue
            for direction in ("greater", "less", "two-sided"):
                p = wilcoxon_one_sided(pairs_from_differences(differences), direction)
                assert abs(p - enumeration_oracle(differences, direction)) < 1e-12

    def test_zero_differences_dropped(self):
        result = wilcoxon_test(pairs_from_differences([0, 0, 1, 2, 3]), "greater")
        assert result.n == 3
        assert result.p_value == 0.125

    def test_invariant_under_rescaling(self):
        rng = random.Random(4)
        for _ in range(50):
            differences = [rng.uniform(-5, 5) for _ in range(12)]
            base = wilcoxon_one_sided(pairs_from_differences(differences))
            scaled = wilcoxon_one_sided(pairs_from_differences([d * 7.5 for d in differences]))
            assert base == pytest.approx(scaled, abs=1e-12)

    def test_exact_and_approximate_agree(self):
        rng = random.Random(21)
        for _ in range(20):
            n = rng.randrange(20, 26)
            pairs = pairs_from_differences([rng.gauss(0.3, 1.0) for _ in range(n)])
            exact = wilcoxon_one_sided(pairs, method="exact")
            approx = wilcoxon_one_sided(pairs, method="approx")
            assert abs(exact - approx) < 0.01

    def test_large_sample_uses_approximation(self):
        pairs = pairs_from_differences(range(1, 41))
        result = wilcoxon_test(pairs, "greater")
        assert result.method == "approx"
        assert 0 < result.p_value < 1e-6

    def test_p_value_in_unit_interval(self):
        result = wilcoxon_test(pairs_from_differences([-1, -2, -3]), "greater")
        assert 0 < result.p_value <= 1

    def test_bad_direction(self):
        with pytest.raises(StatsError):
            wilcoxon_one_sided(pairs_from_differences([1]), "sideways")

    def test_unpaired_mappings_rejected(self):
        with pytest.raises(StatsError):
            PairedSample.from_mappings({"a": 1, "b": 2}, {"a": 1})


class TestConfidenceInterval:
    def test_constant_samples(self):
        assert confidence_interval_95([4.0, 4.0, 4.0]) == (4.0, 4.0)

    def test_matches_reference(self):
        samples = [1, 2, 3, 4, 5]
        low, high = confidence_interval_95(samples)
        ref_low, ref_high = stats.t.interval(0.95, 4, loc=3, scale=stats.sem(samples))
        assert low == pytest.approx(ref_low, abs=1e-12)
        assert high == pytest.approx(ref_high, abs=1e-12)
        assert (high - low) / 2 == pytest.approx(2.776445105 * math.sqrt(2.5) / math.sqrt(5), rel=1e-8)

    def test_single_sample(self):
        with pytest.raises(InsufficientSamples):
            confidence_interval_95([1.0])


class TestTrialSeries:
    def test_timestamps_must_increase(self):
        with pytest.raises(TrialSeriesError):
            series("c", "t", 0, [(0, 0, 0, 1), (0, 0, 0, 2)])

    def test_measures_must_not_decrease(self):
        with pytest.raises(TrialSeriesError):
            series("c", "t", 0, [(0, 0, 0, 10), (5, 0, 0, 9)])

    def test_value_at_is_a_step_function(self):
        trial = series("c", "t", 0, [(10, 1, 0, 100), (20, 2, 1, 200)])
        assert trial.value_at(5, "coverage") == 0.0
        assert trial.value_at(10, "coverage") == 100
        assert trial.value_at(15, "bugs_reached") == 1
        assert trial.value_at(99, "bugs_triggered") == 1


class TestNormalizeCoverage:
    def test_series_against_itself_ends_at_one(self):
        baseline = [series("stock", "libpng", i, [(0, 0, 0, 100 + i), (60, 0, 0, 500 + 10 * i)]) for i in range(3)]
        result = normalize_coverage(baseline, baseline)
        mean_final = sum(t.final("coverage") for t in result.series) / len(result.series)
        assert mean_final == pytest.approx(1.0)

    def test_arithmetic(self):
        trial = series("llm", "libpng", 0, [(0, 0, 0, 450)])
        baseline = [series("stock", "libpng", 0, [(0, 0, 0, 500)])]
        result = normalize_coverage([trial], baseline)
        assert result.series[0].final("coverage") == pytest.approx(0.9)

    def test_multi_target_table(self):
        trials = [
            series("llm", "libpng", 0, [(0, 0, 0, 300), (60, 0, 0, 600)]),
            series("llm", "libtiff", 0, [(0, 0, 0, 100), (60, 0, 0, 150)]),
            series("llm", "sqlite3", 0, [(0, 0, 0, 50)]),
        ]
        baseline = [
            series("stock", "libpng", 0, [(0, 0, 0, 400)]),
            series("stock", "libpng", 1, [(0, 0, 0, 800)]),
            series("stock", "libtiff", 0, [(0, 0, 0, 200)]),
        ]

        result = normalize_coverage(trials, baseline)
        by_target = {t.target: [p[3] for p in t.points] for t in result.series}

        assert by_target["libpng"] == pytest.approx([0.5, 1.0])
        assert by_target["libtiff"] == pytest.approx([0.5, 0.75])
        assert "sqlite3" in result.errors

    def test_zero_baseline_is_an_error_entry(self):
        result = normalize_coverage([series("llm", "x", 0, [(0, 0, 0, 1)])],
                                    [series("stock", "x", 0, [(0, 0, 0, 0)])])
        assert result.series == []
        assert "x" in result.errors


class TestEventLogs:
    def test_parse_fills_forward(self, tmp_path):
        path = tmp_path / "0.log"
        path.write_text(SAMPLE_LOG)

        trial = parse_event_log(path, "llm", "libpng", 0)

        assert trial.points == (
            (0.0, 0.0, 0.0, 100.0),
            (60.0, 1.0, 0.0, 150.0),
            (120.0, 1.0, 1.0, 150.0),
            (180.0, 1.0, 1.0, 200.0),
        )

    def test_unknown_metric(self, tmp_path):
        path = tmp_path / "0.log"
        path.write_text("0,edges,4\n")
        with pytest.raises(TrialSeriesError):
            parse_event_log(path, "c", "t", 0)

    def test_decreasing_counter_rejected(self, tmp_path):
        path = tmp_path / "0.log"
        path.write_text("0,coverage,10\n5,coverage,4\n")
        with pytest.raises(TrialSeriesError):
            parse_event_log(path, "c", "t", 0)

    def test_load_series_dir_and_tables(self, tmp_path):
        for corpus, final in (("llm", 300), ("stock", 200)):
            for trial in range(3):
                path = tmp_path / corpus / "libpng" / f"{trial}.log"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(f"0,coverage,10\n3600,coverage,{final + trial}\n3600,bugs_reached,{trial}\n")

        loaded = load_series_dir(tmp_path)
        assert len(loaded) == 6

        summary = summary_table(loaded)
        llm = summary[summary["corpus"] == "llm"].iloc[0]
        assert llm["trials"] == 3
        assert llm["coverage_mean"] == pytest.approx(301)
        assert llm["bugs_reached_mean"] == pytest.approx(1)

        timeline = timeseries_table(loaded, step=1800)
        assert sorted(timeline["elapsed"].unique()) == [0.0, 1800.0, 3600.0]
        first = timeline[(timeline["corpus"] == "stock") & (timeline["elapsed"] == 1800.0)].iloc[0]
        assert first["coverage_mean"] == pytest.approx(10)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(StatsError):
            load_series_dir(tmp_path)


class TestPairing:
    def test_paired_finals_mean(self):
        trials = [
            series("llm", "a", 0, [(0, 1, 0, 0)]),
            series("llm", "a", 1, [(0, 3, 0, 0)]),
            series("stock", "a", 0, [(0, 1, 0, 0)]),
            series("llm", "b", 0, [(0, 5, 0, 0)]),
            series("stock", "b", 0, [(0, 4, 0, 0)]),
            series("stock", "c", 0, [(0, 9, 0, 0)]),
        ]
        pairs = paired_finals(trials, "llm", "stock", "bugs_reached")
        assert pairs.targets == ("a", "b")
        assert pairs.x == (2.0, 5.0)
        assert pairs.y == (1.0, 4.0)

    def test_wilcoxon_table_rows(self):
        trials = [series(corpus, f"t{i}", 0, [(0, i + bump, 0, 10 * i + bump)])
                  for i in range(5) for corpus, bump in (("llm", 1), ("stock", 0))]
        table = wilcoxon_table(trials, [("llm", "stock")])

        assert list(table["metric"]) == ["bugs_reached", "bugs_triggered", "coverage"]
        reached = table[table["metric"] == "bugs_reached"].iloc[0]
        assert reached["p_value"] == 0.03125
        triggered = table[table["metric"] == "bugs_triggered"].iloc[0]
        assert triggered["error"]

    def test_pairs_file(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("target,x,y\nlibpng,5,1\nlibtiff,7,2\nlibxml2,3,3\n")
        pairs = load_pairs_file(path)
        assert len(pairs) == 3
        assert wilcoxon_test(pairs).n == 2


class TestStatsCli:
    def write_logs(self, root):
        for corpus, bump in (("llm", 2), ("stock", 0)):
            for target in ("libpng", "libtiff", "libxml2", "sqlite3", "php"):
                path = root / corpus / target / "0.log"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(f"0,coverage,100\n60,coverage,{200 + bump}\n60,bugs_reached,{1 + bump}\n")

    def test_series_outputs(self, tmp_path):
        self.write_logs(tmp_path / "trials")
        out = tmp_path / "stats"

        code = seedforge.main(["stats", "--series", str(tmp_path / "trials"), "--compare", "llm", "stock",
                               "--baseline", "stock", "--out", str(out)])

        assert code == 0
        assert {p.name for p in out.iterdir()} == {
            "summary.csv", "timeseries.csv", "normalized_coverage.csv", "wilcoxon.csv",
        }
        wilcoxon = pd.read_csv(out / "wilcoxon.csv")
        reached = wilcoxon[wilcoxon["metric"] == "bugs_reached"].iloc[0]
        assert reached["p_value"] == pytest.approx(0.03125)

    def test_pairs_json(self, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("target,x,y\na,3,1\nb,4,1\nc,5,1\n")

        code = seedforge.main(["stats", "--pairs", str(pairs), "--format", "json", "--out", str(tmp_path / "o")])

        assert code == 0
        rows = json.loads((tmp_path / "o" / "wilcoxon_pairs.json").read_text())
        assert rows[0]["p_value"] == pytest.approx(0.125)

    def test_missing_inputs(self, tmp_path):
        assert seedforge.main(["stats", "--out", str(tmp_path)]) == 2

    def test_unknown_baseline(self, tmp_path):
        self.write_logs(tmp_path / "trials")
        code = seedforge.main(["stats", "--series", str(tmp_path / "trials"), "--baseline", "afl",
                               "--out", str(tmp_path / "stats")])
        assert code == 2
