from __future__ import annotations

import heapq
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from vinevalue.linkage import (
    EditCosts,
    LabelMatch,
    edit_distance,
    expand_price_entries,
    load_acronyms,
    load_wordlist,
    match_labels,
    normalize_label,
    read_match_report,
    write_match_report,
)
from vinevalue.model import AppellationRecord, PriceEntry


def oracle_edit_distance(a: str, b: str, costs: EditCosts = EditCosts()) -> float:
    """Dijkstra over edit sequences: the true minimal cost of turning a into
    b with single-character inserts, deletes, substitutions and adjacent
    transpositions. Exponential; only for short strings."""
    alphabet = sorted(set(a) | set(b)) or ["A"]
    max_len = max(len(a), len(b)) + 2
    heap = [(0.0, a)]
    seen: dict[str, float] = {}
    while heap:
        cost, s = heapq.heappop(heap)
        if s == b:
            return cost
        if seen.get(s, float("inf")) <= cost:
            continue
        seen[s] = cost

        def push(new_cost: float, t: str) -> None:
            if new_cost < seen.get(t, float("inf")):
                heapq.heappush(heap, (new_cost, t))

        for i in range(len(s)):
            push(cost + costs.delete, s[:i] + s[i + 1:])
            for ch in alphabet:
                if ch != s[i]:
                    push(cost + costs.substitute, s[:i] + ch + s[i + 1:])
        if len(s) < max_len:
            for i in range(len(s) + 1):
                for ch in alphabet:
                    push(cost + costs.insert, s[:i] + ch + s[i:])
        for i in range(len(s) - 1):
            if s[i] != s[i + 1]:
                push(cost + costs.transpose, s[:i] + s[i + 1] + s[i] + s[i + 2:])
    raise AssertionError("unreachable")


class TestNormalizeLabel:
    def test_accents_and_stopwords(self):
        assert normalize_label("Côte du Rhône") == "COTE RHONE"

    def test_empty(self):
        assert normalize_label("") == ""

    def test_acronym_expansion(self):
        assert normalize_label("CDR rouge") == "COTE RHONE ROUGE"

    def test_special_characters(self):
        assert normalize_label("Alsace suivi d'un nom de lieu-dit") == "ALSACE SUIVI UN NOM LIEU DIT"

    @given(st.text(max_size=40))
    def test_idempotent(self, text):
        once = normalize_label(text)
        assert normalize_label(once) == once


class TestEditDistance:
    def test_identity(self):
        assert edit_distance("ABC", "ABC") == 0.0

    def test_transposition(self):
        assert edit_distance("AB", "BA") == 1.0

    def test_forced_deletion_cost(self):
        assert edit_distance("A", "", EditCosts(delete=2.0)) == 2.0

    def test_negative_cost_rejected(self):
        with pytest.raises(ValueError):
            EditCosts(insert=-1.0)

    @pytest.mark.parametrize(
        "costs",
        [
            EditCosts(),
            EditCosts(insert=1.2, delete=0.8, substitute=1.5, transpose=1.1),
            EditCosts(insert=2.0, delete=2.0, substitute=1.0, transpose=2.0),
        ],
    )
    def test_matches_exhaustive_search(self, costs):
        strings = [""]
        for length in (1, 2, 3):
            strings.extend("".join(t) for t in itertools.product("AB", repeat=length))
        strings.extend(["ABC", "CBA", "BCA", "CAB", "ACB"])
        for a, b in itertools.product(strings, repeat=2):
            expected = oracle_edit_distance(a, b, costs)
            assert edit_distance(a, b, costs) == pytest.approx(expected, abs=1e-12), (a, b)

    @given(st.text(alphabet="ABC", max_size=5), st.text(alphabet="ABC", max_size=5))
    def test_symmetric_for_symmetric_costs(self, a, b):
        assert edit_distance(a, b) == edit_distance(b, a)

    @settings(max_examples=60)
    @given(
        st.text(alphabet="AB", max_size=4),
        st.text(alphabet="AB", max_size=4),
        st.text(alphabet="AB", max_size=4),
    )
    def test_triangle_inequality_unit_costs(self, a, b, c):
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c) + 1e-12


def _price(label, price=100.0, region=None):
    return PriceEntry(
        label=label, normalized_label=normalize_label(label), price=price, region_hint=region
    )


def _app(code, name):
    return AppellationRecord(code=code, name=name)


class TestMatchLabels:
    def test_exact_match_accepted(self):
        matches = match_labels([_price("Côte du Rhône")], [_app("3B011", "COTE RHONE")])
        assert matches == [LabelMatch("Côte du Rhône", "3B011", 0.0, True)]

    def test_absent_label_zero_threshold_rejected(self):
        matches = match_labels([_price("Beaujolais")], [_app("3B011", "COTE RHONE")], threshold=0.0)
        assert len(matches) == 1
        assert not matches[0].accepted

    def test_all_pairs_brute_force_agreement(self):
        labels = ["Saint Emilion grand cru", "Pommard premier cru", "Chablis grand cru"]
        targets = [
            _app("2A001", "SAINT EMILION GRAND CRU"),
            _app("2B002", "POMMARD PREMIER CRU"),
            _app("2C003", "CHABLIS GRAND CRU"),
        ]
        # Brute-force oracle: all-pairs minimum with the same tie-break.
        expected = {}
        for label in labels:
            source = normalize_label(label)
            best = min(
                (edit_distance(source, normalize_label(t.name)), t.code) for t in targets
            )
            expected[label] = best[1]
        matches = match_labels([_price(lbl) for lbl in labels], targets)
        assert {m.source_label: m.target_code for m in matches} == expected
        assert all(m.accepted for m in matches)

    def test_tie_breaks_to_smallest_code(self):
        targets = [_app("Z9", "ROUGE"), _app("A1", "ROUGE")]
        matches = match_labels([_price("rouge")], targets)
        assert matches[0].target_code == "A1"

    def test_region_filter(self):
        targets = [_app("A1", "ROUGE")]
        prices = [_price("rouge", region="Alsace")]
        ok = match_labels(prices, targets, region_filter={"A1": "Alsace"})
        assert ok[0].accepted
        bad = match_labels(prices, targets, region_filter={"A1": "Bourgogne"})
        assert not bad[0].accepted
        # No region hint on the price row: the filter cannot contradict.
        neutral = match_labels([_price("rouge")], targets, region_filter={"A1": "Bourgogne"})
        assert neutral[0].accepted

    def test_multi_appellation_label_expands(self):
        label = "'POMMARD 1er Cru' 'Clos des Epeneaux' 'Les Petits Epenots'"
        expanded = expand_price_entries([_price(label, price=250.0)])
        assert [e.label for e in expanded] == [
            "POMMARD 1er Cru", "Clos des Epeneaux", "Les Petits Epenots",
        ]
        assert all(e.price == 250.0 for e in expanded)
        matches = match_labels([_price(label)], [_app("2B002", "POMMARD 1ER CRU")])
        assert len(matches) == 3

    def test_possessive_apostrophes_do_not_expand(self):
        label = "Coteaux d'Aix et d'Ensuès blanc"
        assert [e.label for e in expand_price_entries([_price(label)])] == [label]

    def test_no_targets(self):
        matches = match_labels([_price("rouge")], [])
        assert not matches[0].accepted


class TestWordlists:
    def test_round_trip_files(self, tmp_path):
        stopwords_file = tmp_path / "stopwords.txt"
        stopwords_file.write_text("et\nde\n\ndu\n", encoding="utf-8")
        assert load_wordlist(stopwords_file) == {"ET", "DE", "DU"}
        acronyms_file = tmp_path / "acronyms.txt"
        acronyms_file.write_text("CDR=Côte du Rhône\nSTE=Sainte\n", encoding="utf-8")
        acronyms = load_acronyms(acronyms_file)
        assert acronyms == {"CDR": "COTE DU RHONE", "STE": "SAINTE"}

    def test_match_report_round_trip(self, tmp_path):
        matches = [LabelMatch("a", "X", 1.5, True), LabelMatch("b", "", float("inf"), False)]
        path = tmp_path / "matches.csv"
        write_match_report(matches, path)
        assert read_match_report(path) == matches
