import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from layershap.core import (
    HammingWeightPlan,
    Mask,
    MaskError,
    PruningPlan,
    ShapleyReport,
    apply_layer,
    mask_from_string,
    masks_to_rows,
    ranking_from_phi,
)

bitstrings = st.text(alphabet="01", min_size=1, max_size=64)


class TestMaskParsing:
    def test_all_ones(self):
        mask = mask_from_string("1111")
        assert mask.bits == (True, True, True, True)
        assert mask.hamming_weight() == 4

    def test_mixed(self):
        mask = mask_from_string("1010")
        assert mask.bits == (True, False, True, False)
        assert mask.hamming_weight() == 2

    def test_invalid_character(self):
        with pytest.raises(MaskError, match="invalid mask character"):
            mask_from_string("102")

    def test_empty(self):
        with pytest.raises(MaskError, match="empty"):
            mask_from_string("")

    @given(bitstrings)
    def test_round_trip(self, text):
        assert mask_from_string(text).to_string() == text

    @given(bitstrings)
    def test_weight_counts_ones(self, text):
        assert mask_from_string(text).hamming_weight() == text.count("1")


class TestApplyLayer:
    def test_set(self):
        assert apply_layer(mask_from_string("1010"), 1, True).to_string() == "1110"

    def test_clear(self):
        assert apply_layer(mask_from_string("1010"), 0, False).to_string() == "0010"

    def test_already_off_is_identity(self):
        mask = mask_from_string("1010")
        assert apply_layer(mask, 1, False) == mask

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            apply_layer(mask_from_string("1010"), 4, True)
        with pytest.raises(IndexError):
            apply_layer(mask_from_string("1010"), -1, True)

    @given(bitstrings, st.data())
    def test_idempotent(self, text, data):
        mask = mask_from_string(text)
        layer = data.draw(st.integers(0, len(mask) - 1))
        state = data.draw(st.booleans())
        once = apply_layer(mask, layer, state)
        assert apply_layer(once, layer, state) == once

    @given(bitstrings, st.data())
    def test_on_off_weight_gap_is_one(self, text, data):
        mask = mask_from_string(text)
        layer = data.draw(st.integers(0, len(mask) - 1))
        on = apply_layer(mask, layer, True)
        off = apply_layer(mask, layer, False)
        assert on.hamming_weight() - off.hamming_weight() == 1


class TestMaskMatrix:
    def test_round_trip(self):
        masks = [mask_from_string(t) for t in ("110", "001", "111")]
        rows = masks_to_rows(masks)
        assert rows.shape == (3, 3)
        assert rows.tolist() == [[1, 1, 0], [0, 0, 1], [1, 1, 1]]

    def test_mixed_lengths_rejected(self):
        with pytest.raises(MaskError):
            masks_to_rows([mask_from_string("10"), mask_from_string("100")])


class TestHammingWeightPlan:
    def test_total(self):
        plan = HammingWeightPlan(weights=(3, 2), per_stratum=(4, 5))
        assert plan.total == 9

    def test_split_evenly(self):
        plan = HammingWeightPlan.split_evenly((30, 27, 24, 21, 18), 8000)
        assert plan.per_stratum == (1600, 1600, 1600, 1600, 1600)

    def test_duplicate_weights_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            HammingWeightPlan(weights=(3, 3), per_stratum=(1, 1))

    def test_misaligned_counts_rejected(self):
        with pytest.raises(ValueError, match="align"):
            HammingWeightPlan(weights=(3, 2), per_stratum=(1,))

    def test_json_round_trip(self):
        plan = HammingWeightPlan(weights=(5, 1), per_stratum=(2, 3))
        assert HammingWeightPlan.from_json_obj(plan.to_json_obj()) == plan


class TestRanking:
    def test_ascending_with_index_ties(self):
        assert ranking_from_phi([0.5, 0.1, 0.5, 0.1]) == [1, 3, 0, 2]

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            ranking_from_phi([0.1, float("nan")])


def _report(phi=(0.3, 0.1, 0.2)):
    return ShapleyReport(
        phi=phi,
        num_mc_samples=100,
        strata=HammingWeightPlan(weights=(2, 1), per_stratum=(50, 50)),
        seed=7,
        variant="force",
    )


class TestShapleyReport:
    def test_ranking_is_permutation(self):
        report = _report()
        assert sorted(report.ranking()) == [0, 1, 2]
        assert report.ranking() == [1, 2, 0]

    def test_report_id_stable(self):
        assert _report().report_id() == _report().report_id()
        assert _report().report_id() != _report(phi=(0.3, 0.1, 0.25)).report_id()

    def test_json_round_trip(self):
        report = _report()
        again = ShapleyReport.from_json_obj(json.loads(json.dumps(report.to_json_obj())))
        assert again == report
        assert again.report_id() == report.report_id()

    def test_rejects_bad_variant(self):
        with pytest.raises(ValueError, match="variant"):
            _report().__class__(
                phi=(0.1,), num_mc_samples=1,
                strata=HammingWeightPlan(weights=(1,), per_stratum=(1,)),
                seed=0, variant="banana",
            )

    def test_rejects_nonfinite_phi(self):
        with pytest.raises(ValueError):
            _report(phi=(0.1, float("inf"), 0.0))


class TestPruningPlan:
    def test_length_must_match(self):
        with pytest.raises(ValueError):
            PruningPlan(removed_layers=(1, 2), target_remove_count=3, report_ref="x")

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            PruningPlan(removed_layers=(1, 1), target_remove_count=2, report_ref="x")

    def test_json_round_trip(self):
        plan = PruningPlan(removed_layers=(2, 0), target_remove_count=2,
                           report_ref="abc", phi=(0.5, 0.9, 0.1))
        assert PruningPlan.from_json_obj(plan.to_json_obj()) == plan
