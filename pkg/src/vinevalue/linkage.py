"""Label normalization and fuzzy matching between the insurance price scale
and the appellation nomenclature.

The two nomenclatures share no key, so price labels are matched to
appellation names by generalized edit distance after a cleaning pass
(accents stripped, acronyms expanded, French filler words removed).
"""
from __future__ import annotations

import csv
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .model import AppellationRecord, PriceEntry

#: Recurring French words that carry no meaning in a nomenclature merge.
DEFAULT_STOPWORDS = frozenset({"ET", "DE", "DU", "DES", "D", "LA", "LE", "LES"})

#: Contractions rewritten to their explicit form before matching. Expansion
#: values must not themselves contain acronym keys (normalization is a
#: single pass and must be idempotent).
DEFAULT_ACRONYMS: Mapping[str, str] = {"CDR": "COTE DU RHONE"}

_TOKEN_SPLIT = re.compile(r"[^0-9A-Z]+")
_QUOTED = re.compile(r"[`'‘’“”\"]([^`'‘’“”\"]+)[`'‘’“”\"]")


def strip_accents(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def normalize_label(
    raw: str,
    *,
    acronyms: Mapping[str, str] | None = None,
    stopwords: frozenset[str] | set[str] | None = None,
) -> str:
    """Canonical uppercase form of a wine label for matching.

    Accents and special characters are removed, acronym tokens are expanded,
    stopword tokens dropped and whitespace collapsed. Idempotent for the
    default dictionaries.
    """
    if acronyms is None:
        acronyms = DEFAULT_ACRONYMS
    if stopwords is None:
        stopwords = DEFAULT_STOPWORDS
    text = strip_accents(raw).upper()
    tokens: list[str] = []
    for token in _TOKEN_SPLIT.split(text):
        if not token:
            continue
        if token in acronyms:
            tokens.extend(t for t in _TOKEN_SPLIT.split(acronyms[token].upper()) if t)
        else:
            tokens.append(token)
    return " ".join(t for t in tokens if t not in stopwords)


@dataclass(frozen=True)
class EditCosts:
    """Per-operation costs for the generalized edit distance.

    The distance is exact for cost tables satisfying
    ``2 * transpose >= insert + delete`` (always true for unit costs).
    """

    insert: float = 1.0
    delete: float = 1.0
    substitute: float = 1.0
    transpose: float = 1.0

    def __post_init__(self) -> None:
        for name in ("insert", "delete", "substitute", "transpose"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cost must be >= 0")


UNIT_COSTS = EditCosts()


def edit_distance(a: str, b: str, costs: EditCosts = UNIT_COSTS) -> float:
    """Minimal total cost of transforming ``a`` into ``b`` using insertions,
    deletions, substitutions and transpositions of adjacent characters."""
    if a == b:
        return 0.0
    la, lb = len(a), len(b)
    if la == 0:
        return lb * costs.insert
    if lb == 0:
        return la * costs.delete
    inf = float("inf")
    # Lowrance-Wagner: d has two sentinel rows/columns so the transposition
    # lookup d[i1-1][j1-1] is always in range.
    d = [[inf] * (lb + 2) for _ in range(la + 2)]
    d[1][1] = 0.0
    for i in range(1, la + 1):
        d[i + 1][1] = i * costs.delete
    for j in range(1, lb + 1):
        d[1][j + 1] = j * costs.insert
    last_row: dict[str, int] = {}
    for i in range(1, la + 1):
        last_col = 0
        for j in range(1, lb + 1):
            i1 = last_row.get(b[j - 1], 0)
            j1 = last_col
            if a[i - 1] == b[j - 1]:
                sub = 0.0
                last_col = j
            else:
                sub = costs.substitute
            best = min(
                d[i][j] + sub,
                d[i][j + 1] + costs.delete,
                d[i + 1][j] + costs.insert,
            )
            if i1 > 0 and j1 > 0:
                trans = (
                    d[i1][j1]
                    + (i - i1 - 1) * costs.delete
                    + costs.transpose
                    + (j - j1 - 1) * costs.insert
                )
                if trans < best:
                    best = trans
            d[i + 1][j + 1] = best
        last_row[a[i - 1]] = i
    return d[la + 1][lb + 1]


@dataclass(frozen=True)
class LabelMatch:
    """Best appellation candidate for one price-scale label."""

    source_label: str
    target_code: str
    distance: float
    accepted: bool


def expand_price_entries(entries: Iterable[PriceEntry], **normalize_kwargs) -> list[PriceEntry]:
    """Split price rows whose label lists several quoted appellation names
    into one row per name, replicating the price. Rows without multiple
    quoted segments pass through unchanged."""
    quote_chars = "`'‘’“”\""
    out: list[PriceEntry] = []
    for entry in entries:
        segments = [s.strip() for s in _QUOTED.findall(entry.label) if s.strip()]
        # Possessive apostrophes inside ordinary labels must not trigger a
        # split, so expansion requires the label to open with a quote.
        if len(segments) < 2 or not entry.label.lstrip().startswith(tuple(quote_chars)):
            out.append(entry)
            continue
        for segment in segments:
            out.append(
                PriceEntry(
                    label=segment,
                    normalized_label=normalize_label(segment, **normalize_kwargs),
                    price=entry.price,
                    production_mode=entry.production_mode,
                    region_hint=entry.region_hint,
                )
            )
    return out


def match_labels(
    prices: Sequence[PriceEntry],
    appellations: Sequence[AppellationRecord],
    *,
    threshold: float | None = None,
    threshold_fraction: float = 0.10,
    costs: EditCosts = UNIT_COSTS,
    region_filter: Mapping[str, str] | None = None,
    acronyms: Mapping[str, str] | None = None,
    stopwords: frozenset[str] | set[str] | None = None,
) -> list[LabelMatch]:
    """Match every price label to its minimum-distance appellation.

    A match is accepted when the distance is at or below the threshold
    (absolute ``threshold``, or ``threshold_fraction`` of the longer
    normalized string times the substitution cost) and, when
    ``region_filter`` maps the appellation to a region, the price row's
    region hint does not contradict it. Ties on distance break to the
    lexicographically smallest appellation code so results are reproducible.
    """
    norm_kwargs = {"acronyms": acronyms, "stopwords": stopwords}
    targets = sorted(
        (app.code, normalize_label(app.name, **norm_kwargs)) for app in appellations
    )
    matches: list[LabelMatch] = []
    for entry in expand_price_entries(prices, **norm_kwargs):
        source = entry.normalized_label or normalize_label(entry.label, **norm_kwargs)
        if not targets:
            matches.append(LabelMatch(entry.label, "", float("inf"), False))
            continue
        best_code = ""
        best_name = ""
        best_dist = float("inf")
        for code, name in targets:
            dist = edit_distance(source, name, costs)
            if dist < best_dist:
                best_code, best_name, best_dist = code, name, dist
        limit = (
            threshold
            if threshold is not None
            else threshold_fraction * max(len(source), len(best_name)) * costs.substitute
        )
        accepted = best_dist <= limit
        if accepted and region_filter is not None:
            expected = region_filter.get(best_code)
            if expected is not None and entry.region_hint is not None:
                accepted = expected == entry.region_hint
        matches.append(LabelMatch(entry.label, best_code, best_dist, accepted))
    return matches


def load_wordlist(path: str | Path) -> frozenset[str]:
    """Stopword file: one entry per line, blank lines ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            words.add(strip_accents(line).upper())
    return frozenset(words)


def load_acronyms(path: str | Path) -> dict[str, str]:
    """Acronym file: one ``SHORT=Long form`` entry per line."""
    acronyms: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        short, long_form = line.split("=", 1)
        acronyms[strip_accents(short).strip().upper()] = strip_accents(long_form).strip().upper()
    return acronyms


def write_match_report(matches: Iterable[LabelMatch], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["label", "code", "distance", "accepted"])
        for m in matches:
            writer.writerow([m.source_label, m.target_code, repr(m.distance), int(m.accepted)])


def read_match_report(path: str | Path) -> list[LabelMatch]:
    matches = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            matches.append(LabelMatch(row[0], row[1], float(row[2]), bool(int(row[3]))))
    return matches
