"""Parsers for the four open data inputs and canonical serialization of the
domain records.

All parsers are pure: they take a file path (UTF-8 with a Latin-1 fallback)
or an open text stream, and return records plus an :class:`IngestReport`
carrying row-level errors and counts. Secretized cells (blank or sentinel
surface values) are treated as absent, never as zero, and counted.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from . import linkage
from .model import (
    AppellationRecord,
    AuthorizationMask,
    Category,
    CountyRecord,
    CviCode,
    DEFAULT_WEIGHTS,
    PriceEntry,
    ProductionMode,
    WineColor,
    department_of_insee,
    is_valid_insee,
)

logger = logging.getLogger(__name__)

#: Surface cell values treated as secretized (absent, not zero).
DEFAULT_SECRET_VALUES = ("", "s", "S", "n/a", "N/A")

#: Mask weights are snapped to these canonical priorities when a file value
#: is within SNAP_TOLERANCE (the source files carry rounded values such as
#: 0.33 for one third).
CANONICAL_WEIGHTS = (1.0, 1.0 / 3.0, 0.25)
SNAP_TOLERANCE = 0.01

_COLOR_ALIASES = {
    "BLANC": WineColor.WHITE,
    "WHITE": WineColor.WHITE,
    "B": WineColor.WHITE,
    "W": WineColor.WHITE,
    "ROUGE": WineColor.RED,
    "RED": WineColor.RED,
    "R": WineColor.RED,
    "ROSE": WineColor.ROSE,
    "RS": WineColor.ROSE,
    "MIXTE": WineColor.MIXED,
    "MIXED": WineColor.MIXED,
}

_CATEGORY_ALIASES = {
    "AOP": Category.AOP,
    "AOC": Category.AOP,
    "AOP_BRANDY": Category.AOP_BRANDY,
    "BRANDY": Category.AOP_BRANDY,
    "EAU_DE_VIE": Category.AOP_BRANDY,
    "PGI": Category.PGI,
    "IGP": Category.PGI,
    "NON_PGI": Category.NON_PGI,
    "SIG": Category.NON_PGI,
    "VSIG": Category.NON_PGI,
    "PSEUDO_NON_PGI": Category.PSEUDO_NON_PGI,
}


class ConfigError(Exception):
    """Fatal configuration problem (missing mandatory column, bad mapping)."""


class IntegrityError(Exception):
    """Fatal referential-integrity violation in the parsed data."""


@dataclass
class IngestReport:
    """Counts and row-level errors for one parsed dataset."""

    dataset: str
    rows_read: int = 0
    records_out: int = 0
    secretized: int = 0
    unmatched: int = 0
    row_errors: list[tuple[int, str]] = field(default_factory=list)
    notes: dict[str, int] = field(default_factory=dict)

    def add_error(self, line: int, message: str) -> None:
        self.row_errors.append((line, message))

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "rows_read": self.rows_read,
            "records_out": self.records_out,
            "secretized": self.secretized,
            "unmatched": self.unmatched,
            "row_error_count": len(self.row_errors),
            "row_errors": [
                {"line": line, "message": message} for line, message in self.row_errors[:50]
            ],
            "notes": dict(sorted(self.notes.items())),
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def write_reports_jsonl(reports: Iterable[IngestReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for report in reports:
            fh.write(report.to_json())
            fh.write("\n")


def _open_source(source) -> IO[str]:
    """Path-like sources are decoded as UTF-8 with a Latin-1 fallback (the
    upstream files mix encodings for French accents)."""
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
        try:
            return io.StringIO(raw.decode("utf-8"))
        except UnicodeDecodeError:
            return io.StringIO(raw.decode("latin-1"))
    return source


def _read_table(source, delimiter: str, dataset: str):
    """Header list plus (line_number, row dict) pairs; the header is
    mandatory."""
    fh = _open_source(source)
    reader = csv.reader(fh, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError(f"{dataset}: input has no header row") from None
    header = [h.strip() for h in header]
    rows = []
    for fields in reader:
        if not fields or all(not f.strip() for f in fields):
            continue
        rows.append((reader.line_num, dict(zip(header, (f.strip() for f in fields)))))
    return header, rows


def _require_columns(header: Sequence[str], needed: Iterable[str], dataset: str) -> None:
    missing = [c for c in needed if c and c not in header]
    if missing:
        raise ConfigError(f"{dataset}: missing mandatory column(s) {missing} in header {header}")


def _parse_float(text: str) -> float:
    return float(text.replace(" ", "").replace(" ", ""))


def parse_customs_by_appellation(
    source,
    *,
    code_col: str = "cvi",
    surface_col: str = "surface_ha",
    name_col: str | None = None,
    color_col: str | None = None,
    category_col: str | None = None,
    yield_cols: Mapping[int, str] | None = None,
    volume_cols: Mapping[int, str] | None = None,
    default_category: Category = Category.AOP,
    truncation: int | None = None,
    delimiter: str = ";",
    secret_values: Sequence[str] = DEFAULT_SECRET_VALUES,
) -> tuple[list[AppellationRecord], IngestReport]:
    """Parse the customs per-appellation statistics.

    Product rows sharing a CVI prefix are merged into one appellation record:
    surfaces are summed and yearly yields are volume-weight-averaged (plain
    average when no volume column carries data). Secretized surface cells are
    skipped and counted. Zero yields encode non-production and are stored as
    missing.
    """
    report = IngestReport(dataset="customs_by_appellation")
    yield_cols = dict(yield_cols or {})
    volume_cols = dict(volume_cols or {})
    header, rows = _read_table(source, delimiter, report.dataset)
    _require_columns(header, [code_col, surface_col], report.dataset)
    _require_columns(header, yield_cols.values(), report.dataset)
    _require_columns(header, volume_cols.values(), report.dataset)

    groups: dict[str, dict] = {}
    for line, row in rows:
        report.rows_read += 1
        raw_code = row.get(code_col, "")
        if not raw_code:
            report.add_error(line, "empty CVI code")
            continue
        try:
            code = CviCode.from_raw(raw_code, truncation=truncation)
        except ValueError as exc:
            report.add_error(line, str(exc))
            continue
        surface_text = row.get(surface_col, "")
        if surface_text in secret_values:
            report.secretized += 1
            surface = None
        else:
            try:
                surface = _parse_float(surface_text)
            except ValueError:
                report.add_error(line, f"malformed surface {surface_text!r}")
                continue
            if surface < 0:
                report.add_error(line, f"negative surface {surface!r}")
                continue

        group = groups.setdefault(
            code.prefix,
            {"surfaces": [], "name": "", "color": WineColor.UNKNOWN,
             "category": default_category, "yields": {}},
        )
        if surface is not None:
            group["surfaces"].append(surface)
        if name_col and not group["name"]:
            group["name"] = row.get(name_col, "")
        if color_col and group["color"] is WineColor.UNKNOWN:
            group["color"] = _COLOR_ALIASES.get(
                linkage.strip_accents(row.get(color_col, "")).upper(), WineColor.UNKNOWN
            )
        if category_col:
            alias = row.get(category_col, "").upper()
            if alias in _CATEGORY_ALIASES:
                group["category"] = _CATEGORY_ALIASES[alias]
        for year, col in yield_cols.items():
            text = row.get(col, "")
            if text in secret_values:
                continue
            try:
                value = _parse_float(text)
            except ValueError:
                report.add_error(line, f"malformed yield {text!r} in column {col}")
                continue
            if value <= 0:
                continue
            weight = 1.0
            vol_col = volume_cols.get(year)
            if vol_col:
                vol_text = row.get(vol_col, "")
                if vol_text not in secret_values:
                    try:
                        weight = max(_parse_float(vol_text), 0.0)
                    except ValueError:
                        report.add_error(line, f"malformed volume {vol_text!r} in column {vol_col}")
                        continue
            group["yields"].setdefault(year, []).append((value, weight))

    records = []
    for prefix in sorted(groups):
        group = groups[prefix]
        history = {}
        for year, pairs in group["yields"].items():
            weighted = [(v, w) for v, w in pairs if w > 0]
            if weighted:
                history[year] = math.fsum(v * w for v, w in weighted) / math.fsum(
                    w for _, w in weighted
                )
            else:
                history[year] = math.fsum(v for v, _ in pairs) / len(pairs)
        records.append(
            AppellationRecord(
                code=prefix,
                name=group["name"],
                category=group["category"],
                color=group["color"],
                marginal_surface=math.fsum(group["surfaces"]),
                yield_history=history,
            )
        )
    report.records_out = len(records)
    return records, report


def parse_customs_by_county(
    source,
    *,
    insee_col: str = "insee",
    surface_col: str = "surface_ha",
    ra_col: str | None = None,
    delimiter: str = ";",
    secret_values: Sequence[str] = DEFAULT_SECRET_VALUES,
) -> tuple[list[CountyRecord], IngestReport]:
    """Parse the customs per-county statistics. Codes are read as text so
    leading zeros survive; a duplicated county is a fatal error."""
    report = IngestReport(dataset="customs_by_county")
    header, rows = _read_table(source, delimiter, report.dataset)
    _require_columns(header, [insee_col, surface_col], report.dataset)

    records: dict[str, CountyRecord] = {}
    for line, row in rows:
        report.rows_read += 1
        insee = row.get(insee_col, "")
        if not is_valid_insee(insee):
            report.add_error(line, f"invalid insee code {insee!r}")
            continue
        if insee in records:
            raise IntegrityError(f"duplicate insee code {insee!r} at line {line}")
        surface_text = row.get(surface_col, "")
        if surface_text in secret_values:
            report.secretized += 1
            continue
        try:
            surface = _parse_float(surface_text)
        except ValueError:
            report.add_error(line, f"malformed surface {surface_text!r}")
            continue
        if surface < 0:
            report.add_error(line, f"negative surface {surface!r}")
            continue
        records[insee] = CountyRecord(
            insee_code=insee,
            department=department_of_insee(insee),
            agricultural_region_id=row.get(ra_col, "") if ra_col else "",
            marginal_surface=surface,
        )
    out = [records[k] for k in sorted(records)]
    report.records_out = len(out)
    return out, report


def snap_weight(value: float, tolerance: float = SNAP_TOLERANCE) -> float:
    """Snap a file-supplied weight to the nearest canonical priority when it
    is within ``tolerance`` (0.33 becomes exactly one third)."""
    for canonical in CANONICAL_WEIGHTS:
        if abs(value - canonical) <= tolerance:
            return canonical
    return value


def parse_inao_authorizations(
    source,
    appellations: Sequence[AppellationRecord],
    counties: Sequence[CountyRecord],
    *,
    appellation_col: str = "appellation",
    insee_col: str = "insee",
    weight_col: str | None = None,
    weights: Mapping[Category, float] = DEFAULT_WEIGHTS,
    delimiter: str = ";",
) -> tuple[AuthorizationMask, IngestReport]:
    """Parse the authorization list into a sparse mask.

    Rows referencing unknown appellations or counties are excluded and
    counted, never silently dropped. Weights come from the optional weight
    column (snapped to the canonical priorities) or from the appellation
    category.
    """
    report = IngestReport(dataset="inao_authorizations")
    known_apps = {app.code: app for app in appellations}
    known_counties = {c.insee_code for c in counties}
    header, rows = _read_table(source, delimiter, report.dataset)
    _require_columns(header, [appellation_col, insee_col], report.dataset)

    mask = AuthorizationMask()
    for line, row in rows:
        report.rows_read += 1
        code = row.get(appellation_col, "")
        insee = row.get(insee_col, "")
        app = known_apps.get(code)
        if app is None:
            report.unmatched += 1
            report.notes["unmatched_appellation"] = report.notes.get("unmatched_appellation", 0) + 1
            continue
        if insee not in known_counties:
            report.unmatched += 1
            report.notes["unmatched_county"] = report.notes.get("unmatched_county", 0) + 1
            continue
        weight = weights.get(app.category, 0.25)
        if weight_col:
            text = row.get(weight_col, "")
            if text:
                try:
                    weight = snap_weight(_parse_float(text))
                except ValueError:
                    report.add_error(line, f"malformed weight {text!r}")
                    continue
        if not 0 < weight <= 1:
            report.add_error(line, f"weight {weight!r} outside (0, 1]")
            continue
        mask.cells.add((code, insee))
        previous = mask.weight.setdefault(code, weight)
        if previous != weight:
            report.notes["weight_conflicts"] = report.notes.get("weight_conflicts", 0) + 1
    report.records_out = len(mask.cells)
    return mask, report


def inject_pseudo_appellations(
    appellations: Sequence[AppellationRecord],
    counties: Sequence[CountyRecord],
    mask: AuthorizationMask,
    non_pgi_surface_by_department: Mapping[str, float],
    *,
    weight: float = 0.25,
    code_prefix: str = "NONPGI",
) -> tuple[list[AppellationRecord], AuthorizationMask]:
    """Add one non-PGI pseudo-appellation per department.

    Non-PGI wine is absent from the per-appellation statistics, so each
    department with positive non-PGI surface gets a synthetic appellation
    authorized in exactly its counties. Inputs are never modified; new lists
    are returned. Departments without counties are skipped with a warning.
    """
    counties_by_department: dict[str, list[str]] = {}
    for county in counties:
        counties_by_department.setdefault(county.department, []).append(county.insee_code)

    new_apps = list(appellations)
    new_mask = mask.copy()
    existing = {app.code for app in appellations}
    for department in sorted(non_pgi_surface_by_department):
        surface = non_pgi_surface_by_department[department]
        if surface <= 0:
            continue
        members = counties_by_department.get(department)
        if not members:
            logger.warning(
                "department %s has %.3f ha of non-PGI surface but no counties; skipped",
                department, surface,
            )
            continue
        code = f"{code_prefix}{department}"
        if code in existing:
            raise IntegrityError(f"pseudo-appellation code {code} collides with an existing record")
        new_apps.append(
            AppellationRecord(
                code=code,
                name=f"Non-PGI pseudo-appellation {department}",
                category=Category.PSEUDO_NON_PGI,
                marginal_surface=surface,
            )
        )
        for insee in members:
            new_mask.cells.add((code, insee))
        new_mask.weight[code] = weight
    return new_apps, new_mask


def parse_price_scale(
    source,
    *,
    label_col: str = "label",
    price_col: str = "price_eur_hl",
    region_col: str | None = None,
    delimiter: str = ";",
    acronyms: Mapping[str, str] | None = None,
    stopwords: frozenset[str] | set[str] | None = None,
) -> tuple[list[PriceEntry], IngestReport]:
    """Parse the insurance price scale.

    A trailing "C" or "B" token on the label selects the production mode
    (conventional when absent); the marker is stripped before normalization.
    """
    report = IngestReport(dataset="price_scale")
    header, rows = _read_table(source, delimiter, report.dataset)
    _require_columns(header, [label_col, price_col], report.dataset)

    entries = []
    for line, row in rows:
        report.rows_read += 1
        label = row.get(label_col, "")
        if not label:
            report.add_error(line, "empty label")
            continue
        mode = ProductionMode.CONVENTIONAL
        tokens = label.split()
        if tokens and tokens[-1] in ("C", "B"):
            mode = ProductionMode.ORGANIC if tokens[-1] == "B" else ProductionMode.CONVENTIONAL
            name = " ".join(tokens[:-1])
        else:
            name = label
        price_text = row.get(price_col, "")
        try:
            price = _parse_float(price_text)
        except ValueError:
            report.add_error(line, f"malformed price {price_text!r}")
            continue
        if price <= 0:
            report.add_error(line, f"non-positive price {price!r}")
            continue
        entries.append(
            PriceEntry(
                label=name,
                normalized_label=linkage.normalize_label(
                    name, acronyms=acronyms, stopwords=stopwords
                ),
                price=price,
                production_mode=mode,
                region_hint=(row.get(region_col) or None) if region_col else None,
            )
        )
    report.records_out = len(entries)
    return entries, report


def parse_department_surfaces(source, *, delimiter: str = ";") -> dict[str, float]:
    """Two-column file: department; non-PGI surface in hectares."""
    header, rows = _read_table(source, delimiter, "department_surfaces")
    if len(header) < 2:
        raise ConfigError("department_surfaces: need department and surface columns")
    out: dict[str, float] = {}
    for line, row in rows:
        values = list(row.values())
        try:
            out[values[0]] = _parse_float(values[1])
        except (ValueError, IndexError):
            raise ConfigError(f"department_surfaces: malformed row at line {line}")
    return out


def parse_cell_surfaces(source, *, delimiter: str = ";") -> list[tuple[str, str, float, str]]:
    """Supplemental known cells (appellation; insee; surface_ha[; name]), used
    for vineyard area absent from the customs statistics."""
    header, rows = _read_table(source, delimiter, "cell_surfaces")
    if len(header) < 3:
        raise ConfigError("cell_surfaces: need appellation, insee and surface columns")
    cells = []
    for line, row in rows:
        values = list(row.values())
        try:
            cells.append(
                (values[0], values[1], _parse_float(values[2]),
                 values[3] if len(values) > 3 else "")
            )
        except (ValueError, IndexError):
            raise ConfigError(f"cell_surfaces: malformed row at line {line}")
    return cells


def parse_key_value_map(source, *, delimiter: str = ";") -> dict[str, str]:
    """Generic two-column mapping file (county to agricultural region,
    appellation to region, ...)."""
    header, rows = _read_table(source, delimiter, "key_value_map")
    if len(header) < 2:
        raise ConfigError("key_value_map: need two columns")
    out: dict[str, str] = {}
    for _, row in rows:
        values = list(row.values())
        out[values[0]] = values[1]
    return out


def check_referential_integrity(
    appellations: Sequence[AppellationRecord],
    counties: Sequence[CountyRecord],
    mask: AuthorizationMask,
) -> None:
    """Exhaustive scan: every mask cell must reference existing records."""
    app_codes = {a.code for a in appellations}
    insee_codes = {c.insee_code for c in counties}
    for code, insee in mask.cells:
        if code not in app_codes:
            raise IntegrityError(f"mask references unknown appellation {code!r}")
        if insee not in insee_codes:
            raise IntegrityError(f"mask references unknown county {insee!r}")


# Canonical round-trip serialization. Floats are written with repr so a
# write/read cycle reproduces records bit for bit.

def write_appellations(records: Iterable[AppellationRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["code", "name", "category", "color", "surface_ha", "yield_history"])
        for rec in sorted(records, key=lambda r: r.code):
            history = json.dumps(
                {str(year): repr(value) for year, value in sorted(rec.yield_history.items())},
                sort_keys=True,
            )
            writer.writerow(
                [rec.code, rec.name, rec.category.value, rec.color.value,
                 repr(rec.marginal_surface), history]
            )


def read_appellations(path: str | Path) -> list[AppellationRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            history = {int(y): float(v) for y, v in json.loads(row[5]).items()}
            records.append(
                AppellationRecord(
                    code=row[0], name=row[1], category=Category(row[2]),
                    color=WineColor(row[3]), marginal_surface=float(row[4]),
                    yield_history=history,
                )
            )
    return records


def write_counties(records: Iterable[CountyRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["insee", "department", "agricultural_region", "surface_ha"])
        for rec in sorted(records, key=lambda r: r.insee_code):
            writer.writerow(
                [rec.insee_code, rec.department, rec.agricultural_region_id,
                 repr(rec.marginal_surface)]
            )


def read_counties(path: str | Path) -> list[CountyRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            records.append(
                CountyRecord(
                    insee_code=row[0], department=row[1],
                    agricultural_region_id=row[2], marginal_surface=float(row[3]),
                )
            )
    return records


def write_mask(mask: AuthorizationMask, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["appellation", "insee", "weight"])
        for code, insee in sorted(mask.cells):
            writer.writerow([code, insee, repr(mask.weight.get(code, 0.25))])


def read_mask(path: str | Path) -> AuthorizationMask:
    mask = AuthorizationMask()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            mask.cells.add((row[0], row[1]))
            mask.weight[row[0]] = float(row[2])
    return mask


def write_prices(entries: Iterable[PriceEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["label", "normalized_label", "price_eur_hl", "production_mode", "region"])
        for entry in sorted(entries, key=lambda e: (e.label, e.production_mode.value)):
            writer.writerow(
                [entry.label, entry.normalized_label, repr(entry.price),
                 entry.production_mode.value, entry.region_hint or ""]
            )


def read_prices(path: str | Path) -> list[PriceEntry]:
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            entries.append(
                PriceEntry(
                    label=row[0], normalized_label=row[1], price=float(row[2]),
                    production_mode=ProductionMode(row[3]), region_hint=row[4] or None,
                )
            )
    return entries
