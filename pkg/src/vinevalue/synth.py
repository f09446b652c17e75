"""Synthetic ground-truth instances for measuring recovery quality.

The real register is confidential, so recovery quality is scored on
generated instances instead: draw a sparse true surface matrix, publish only
its exact marginals plus an authorization mask that covers the support, then
check how well the allocator's estimate matches the truth.

Appellations are geographically localized the way real ones are: each gets a
home department, and its authorized counties concentrate there (category
controls the spread: protected designations are nearly intra-departmental,
non-PGI pseudo-appellations are strictly departmental).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import allocator
from .allocator import AllocationMatrix, AllocationProblem
from .model import Category, DEFAULT_WEIGHTS
from .validate import kendall_tau

#: Out-of-home-department sampling weight per category (home weight is 1).
DEFAULT_SPREAD: Mapping[Category, float] = {
    Category.AOP: 0.01,
    Category.AOP_BRANDY: 0.01,
    Category.PGI: 0.15,
    Category.NON_PGI: 0.0,
    Category.PSEUDO_NON_PGI: 0.0,
}

DEFAULT_CATEGORY_MIX: Mapping[Category, float] = {
    Category.AOP: 0.5,
    Category.PGI: 0.3,
    Category.NON_PGI: 0.2,
}


@dataclass(eq=False)
class SyntheticInstance:
    truth: AllocationMatrix
    problem: AllocationProblem
    generator_seed: int
    shape: tuple[int, int, float]
    categories: dict[str, Category]


@dataclass(frozen=True)
class RecoveryScore:
    kendall_tau: float
    row_relative_errors: dict[str, float]


def generate(
    shape: tuple[int, int, float],
    category_mix: Mapping[Category, float] | None = None,
    seed: int = 0,
    *,
    extra_mask_factor: float = 0.5,
    counties_per_department: int = 20,
    spread: Mapping[Category, float] = DEFAULT_SPREAD,
    lognormal_mu: float = 2.0,
    lognormal_sigma: float = 1.0,
    weights: Mapping[Category, float] = DEFAULT_WEIGHTS,
) -> SyntheticInstance:
    """Generate an instance with known truth.

    ``shape`` is (appellations, counties, support density). Cell sizes are
    log-normal (heavy-tailed, like real surfaces). The mask is the truth
    support plus ``extra_mask_factor`` times as many authorized-but-unused
    cells, sampled with the same geographic locality. Marginals are exact
    sums of the truth, so the truth is exactly feasible.
    """
    n_appellations, n_counties, density = shape
    if n_appellations < 1 or n_counties < 1 or not 0 < density <= 1:
        raise ValueError(f"degenerate shape {shape!r}")
    if category_mix is None:
        category_mix = DEFAULT_CATEGORY_MIX
    rng = np.random.default_rng(int(seed))

    mix_categories = sorted(category_mix, key=lambda c: c.value)
    mix_weights = np.array([category_mix[c] for c in mix_categories], dtype=float)
    mix_weights = mix_weights / mix_weights.sum()
    categories = rng.choice(len(mix_categories), size=n_appellations, p=mix_weights)

    appellation_codes = [f"A{i:03d}" for i in range(n_appellations)]
    n_departments = max(1, n_counties // counties_per_department)
    department_of = np.minimum(
        np.arange(n_counties) // counties_per_department, n_departments - 1
    )
    insee_codes = []
    county_in_department: dict[int, int] = {}
    for c in range(n_counties):
        dept = int(department_of[c])
        county_in_department[dept] = county_in_department.get(dept, 0) + 1
        insee_codes.append(f"{dept + 1:02d}{county_in_department[dept]:03d}")

    home = rng.integers(0, n_departments, size=n_appellations)
    per_appellation = max(1, int(round(density * n_counties)))

    def county_distribution(app: int) -> np.ndarray:
        category = mix_categories[categories[app]]
        out_weight = spread.get(category, 0.01)
        w = np.where(department_of == home[app], 1.0, out_weight)
        return w / w.sum()

    support: set[tuple[int, int]] = set()
    for a in range(n_appellations):
        if density >= 1.0:
            chosen = range(n_counties)
        else:
            p = county_distribution(a)
            available = int((p > 0).sum())
            count = int(min(available, max(1, rng.poisson(per_appellation))))
            chosen = rng.choice(n_counties, size=count, replace=False, p=p)
        for c in chosen:
            support.add((a, int(c)))
    support_list = sorted(support)
    sizes = np.exp(rng.normal(lognormal_mu, lognormal_sigma, size=len(support_list)))

    truth_cells = {
        (appellation_codes[a], insee_codes[c]): float(v)
        for (a, c), v in zip(support_list, sizes)
    }

    extras: set[tuple[int, int]] = set()
    target_extras = int(round(extra_mask_factor * len(support_list)))
    attempts = 0
    while len(extras) < target_extras and attempts < 50 * max(target_extras, 1):
        a = int(rng.integers(0, n_appellations))
        c = int(rng.choice(n_counties, p=county_distribution(a)))
        if (a, c) not in support:
            extras.add((a, c))
        attempts += 1

    mask_cells = {
        (appellation_codes[a], insee_codes[c]) for a, c in sorted(support | extras)
    }

    row_values: dict[str, list[float]] = {code: [] for code in appellation_codes}
    col_values: dict[str, list[float]] = {insee: [] for insee in insee_codes}
    for (code, insee), value in truth_cells.items():
        row_values[code].append(value)
        col_values[insee].append(value)
    appellation_caps = {code: math.fsum(vs) for code, vs in row_values.items()}
    county_caps = {insee: math.fsum(vs) for insee, vs in col_values.items()}

    categories_by_code = {
        appellation_codes[a]: mix_categories[categories[a]] for a in range(n_appellations)
    }
    alpha = {code: weights[cat] for code, cat in categories_by_code.items()}

    problem = allocator.problem_from_caps(appellation_caps, county_caps, alpha, mask_cells)
    truth = AllocationMatrix(
        cells=truth_cells,
        objective_value=math.fsum(alpha[code] * v for (code, _), v in truth_cells.items()),
        label="truth",
    )
    return SyntheticInstance(
        truth=truth,
        problem=problem,
        generator_seed=int(seed),
        shape=shape,
        categories=categories_by_code,
    )


def score_recovery(truth: AllocationMatrix, recovered: AllocationMatrix) -> RecoveryScore:
    """Tau over the union support plus per-appellation relative error of the
    recovered row sums (zero when the row caps bind at the optimum)."""
    support = sorted(set(truth.cells) | set(recovered.cells))
    tau = kendall_tau(
        [truth.cells.get(cell, 0.0) for cell in support],
        [recovered.cells.get(cell, 0.0) for cell in support],
    )
    truth_rows: dict[str, list[float]] = {}
    recovered_rows: dict[str, list[float]] = {}
    for (code, _), value in truth.cells.items():
        truth_rows.setdefault(code, []).append(value)
    for (code, _), value in recovered.cells.items():
        recovered_rows.setdefault(code, []).append(value)
    errors = {}
    for code, values in sorted(truth_rows.items()):
        expected = math.fsum(values)
        got = math.fsum(recovered_rows.get(code, []))
        errors[code] = abs(got - expected) / expected if expected else abs(got)
    return RecoveryScore(kendall_tau=tau, row_relative_errors=errors)


def uniform_spread_baseline(problem: AllocationProblem) -> AllocationMatrix:
    """Naive baseline: each appellation's cap spread evenly over its
    authorized cells. Ignores county caps, so it is generally infeasible;
    useful only as a rank-correlation reference."""
    per_row: dict[str, int] = {}
    for code, _ in problem.cells:
        per_row[code] = per_row.get(code, 0) + 1
    cells = {}
    for code, insee in problem.cells:
        cells[(code, insee)] = problem.appellation_caps[code] / per_row[code]
    return AllocationMatrix(cells=cells, objective_value=None, label="uniform-spread")


def write_truth(truth: AllocationMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=";")
        writer.writerow(["appellation", "insee", "surface_ha"])
        for (code, insee) in sorted(truth.cells):
            writer.writerow([code, insee, repr(truth.cells[(code, insee)])])


def read_truth(path: str | Path) -> AllocationMatrix:
    cells = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        next(reader)
        for row in reader:
            cells[(row[0], row[1])] = float(row[2])
    return AllocationMatrix(cells=cells, objective_value=None, label="truth")
