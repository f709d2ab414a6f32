import json

import numpy as np
import pytest

from layershap.core import Mask, MaskError, mask_from_string
from layershap.oracles import (
    CountingOracle,
    MaskNotInTable,
    NormalizedOracle,
    ScoreTableError,
    SyntheticGameSpec,
    SyntheticOracle,
    load_game_spec,
    load_score_records,
    load_score_table,
    marginal_contribution,
    normalize_score,
    random_game_spec,
    save_game_spec,
    score_ratio,
)


def additive(weights):
    return SyntheticOracle(SyntheticGameSpec("additive", len(weights), weights))


def pairwise(weights, pairs):
    n = len(weights)
    j = np.zeros((n, n))
    for (a, b), value in pairs.items():
        j[a, b] = j[b, a] = value
    return SyntheticOracle(SyntheticGameSpec("pairwise", n, weights, j))


class TestSyntheticEvaluate:
    def test_additive_full(self):
        assert additive([1, 2, 3]).evaluate(mask_from_string("111")) == 6

    def test_additive_empty(self):
        assert additive([1, 2, 3]).evaluate(mask_from_string("000")) == 0

    def test_pairwise_interaction(self):
        oracle = pairwise([1, 1], {(0, 1): 2})
        assert oracle.evaluate(mask_from_string("11")) == 4
        assert oracle.evaluate(mask_from_string("10")) == 1

    def test_degradation_baseline_is_base_ppl(self):
        spec = random_game_spec("degradation", 8, seed=1, base_ppl=20.0)
        oracle = SyntheticOracle(spec)
        assert oracle.direction == "lower"
        assert oracle.evaluate(Mask.ones(8)) == pytest.approx(20.0)
        assert oracle.baseline_utility == pytest.approx(20.0)

    def test_degradation_empty_coalition_is_finite(self):
        oracle = SyntheticOracle(random_game_spec("degradation", 8, seed=1))
        value = oracle.evaluate(Mask.zeros(8))
        assert np.isfinite(value) and value > oracle.baseline_utility

    def test_rows_match_scalar(self):
        # Batched BLAS reductions may differ from the single-row path in
        # the last ulp; anything beyond that is a real bug.
        oracle = SyntheticOracle(random_game_spec("degradation", 6, seed=4))
        rng = np.random.default_rng(0)
        rows = (rng.random((20, 6)) < 0.5).astype(np.uint8)
        batch = oracle.evaluate_rows(rows)
        singles = [oracle.evaluate(Mask(tuple(bool(v) for v in r))) for r in rows]
        np.testing.assert_allclose(batch, singles, rtol=1e-14)

    def test_mask_length_checked(self):
        with pytest.raises(MaskError):
            additive([1, 2, 3]).evaluate(mask_from_string("11"))


class TestSpecValidation:
    def test_asymmetric_interaction_rejected(self):
        j = np.zeros((2, 2))
        j[0, 1] = 1.0
        with pytest.raises(ValueError, match="symmetric"):
            SyntheticGameSpec("pairwise", 2, [1, 1], j)

    def test_nonzero_diagonal_rejected(self):
        j = np.eye(2)
        with pytest.raises(ValueError, match="diagonal"):
            SyntheticGameSpec("pairwise", 2, [1, 1], j)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            SyntheticGameSpec("cubic", 2, [1, 1])

    def test_json_round_trip(self, tmp_path):
        spec = random_game_spec("pairwise", 5, seed=8)
        path = tmp_path / "game.json"
        save_game_spec(spec, path)
        loaded = load_game_spec(path)
        np.testing.assert_array_equal(loaded.weights, spec.weights)
        np.testing.assert_array_equal(loaded.interaction, spec.interaction)
        assert loaded.kind == spec.kind and loaded.seed == spec.seed


class TestNormalizeScore:
    def test_recomputed_ratio(self):
        assert normalize_score(29.97, 14.98) == pytest.approx(14.98 / 29.97)

    def test_identity_at_baseline(self):
        assert normalize_score(14.98, 14.98) == 1.0

    def test_clamped_when_better_than_baseline(self):
        assert normalize_score(7.0, 14.0, "lower") == 1.0

    def test_floor_clamp(self):
        assert normalize_score(1e12, 1.0, "lower") == 1e-6

    def test_higher_is_better_direction(self):
        assert normalize_score(5.0, 10.0, "higher") == 0.5

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            normalize_score(0.0, 1.0)
        with pytest.raises(ValueError):
            normalize_score(1.0, -2.0)

    def test_monotone_on_unclamped_region(self):
        raws = np.linspace(15.0, 150.0, 50)
        scores = [normalize_score(r, 14.98, "lower") for r in raws]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_unknown_direction(self):
        with pytest.raises(ValueError):
            score_ratio(1.0, 1.0, "sideways")


class TestMarginalContribution:
    def test_additive_is_weight(self):
        oracle = additive([1, 2, 3])
        assert marginal_contribution(oracle, mask_from_string("100"), 2) == 3

    def test_pairwise_interaction_activates(self):
        oracle = pairwise([0, 0], {(0, 1): 5})
        assert marginal_contribution(oracle, mask_from_string("10"), 1) == 5

    def test_matches_two_evaluation_difference(self):
        oracle = SyntheticOracle(random_game_spec("degradation", 8, seed=3))
        rng = np.random.default_rng(17)
        for _ in range(25):
            bits = rng.random(8) < 0.5
            layer = int(rng.integers(0, 8))
            bits[layer] = False
            subset = Mask(tuple(bool(b) for b in bits))
            expected = oracle.evaluate(subset.with_layer(layer, True)) - oracle.evaluate(subset)
            assert marginal_contribution(oracle, subset, layer) == pytest.approx(expected, abs=0)

    def test_layer_already_present_rejected(self):
        with pytest.raises(ValueError, match="already present"):
            marginal_contribution(additive([1, 2]), mask_from_string("10"), 0)


def _write_table(path, header, lines):
    rows = [json.dumps(header)] + [json.dumps(l) if isinstance(l, dict) else l for l in lines]
    path.write_text("\n".join(rows) + "\n")


class TestScoreTable:
    header = {"baseline_utility": 14.98, "layer_count": 4, "direction": "lower"}

    def test_load_and_evaluate(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [
            {"mask": "1111", "raw_utility": 14.98},
            {"mask": "1011", "raw_utility": 16.2},
            {"mask": "0111", "raw_utility": 17.5, "meta": {"stratum": "3"}},
        ])
        table = load_score_table(path)
        assert len(table) == 3
        assert table.baseline_utility == 14.98
        assert table.evaluate(mask_from_string("1011")) == 16.2

    def test_missing_mask_is_error_not_interpolation(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [{"mask": "1111", "raw_utility": 14.98}])
        table = load_score_table(path)
        with pytest.raises(MaskNotInTable):
            table.evaluate(mask_from_string("0000"))

    def test_duplicate_mask_reports_line(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [
            {"mask": "1111", "raw_utility": 14.98},
            {"mask": "1111", "raw_utility": 15.0},
        ])
        with pytest.raises(ScoreTableError, match=r":3: duplicate"):
            load_score_table(path)

    def test_length_mismatch_reports_line(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [{"mask": "111", "raw_utility": 15.0}])
        with pytest.raises(ScoreTableError, match=r":2: mask length 3"):
            load_score_table(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [
            {"mask": "1111", "raw_utility": 14.98},
            "{not json",
        ])
        with pytest.raises(ScoreTableError, match=r":3: bad record"):
            load_score_table(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text('{"layer_count": 4}\n')
        with pytest.raises(ScoreTableError, match=r":1: bad header"):
            load_score_table(path)

    def test_two_loads_agree_everywhere(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [
            {"mask": "1111", "raw_utility": 14.98},
            {"mask": "0110", "raw_utility": 21.4},
        ])
        first, second = load_score_table(path), load_score_table(path)
        for text in ("1111", "0110"):
            mask = mask_from_string(text)
            assert first.evaluate(mask) == second.evaluate(mask)

    def test_records_tolerate_duplicates_and_recompute_scores(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        _write_table(path, self.header, [
            {"mask": "1011", "raw_utility": 29.96},
            {"mask": "1011", "raw_utility": 29.96},
        ])
        records, header = load_score_records(path)
        assert len(records) == 2
        assert records[0].score == pytest.approx(14.98 / 29.96)
        assert header["layer_count"] == 4


class TestWrappers:
    def test_normalized_view_full_mask_is_one(self):
        oracle = SyntheticOracle(random_game_spec("degradation", 6, seed=2))
        view = NormalizedOracle(oracle)
        assert view.evaluate(Mask.ones(6)) == 1.0
        assert view.direction == "higher"

    def test_normalized_rows_match_scalar(self):
        oracle = SyntheticOracle(random_game_spec("degradation", 6, seed=2))
        view = NormalizedOracle(oracle)
        rng = np.random.default_rng(5)
        rows = (rng.random((15, 6)) < 0.6).astype(np.uint8)
        batch = view.evaluate_rows(rows)
        singles = [view.evaluate(Mask(tuple(bool(v) for v in r))) for r in rows]
        np.testing.assert_allclose(batch, singles, rtol=0, atol=0)

    def test_counting(self):
        oracle = CountingOracle(additive([1, 2, 3]))
        oracle.evaluate(mask_from_string("111"))
        oracle.evaluate_rows(np.ones((5, 3), dtype=np.uint8))
        assert oracle.calls == 6
