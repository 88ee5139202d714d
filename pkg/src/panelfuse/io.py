"""CSV ingestion and report serialization.

Outcome files are long format with columns ``domain`` (target or
reference), ``unit``, ``time`` (1-based integer), ``outcome`` (decimal).
Covariate files carry one row per unit: a ``unit`` column followed by one
column per covariate.  Parsing is strict: unknown columns are rejected
unless the permissive flag is set, and every unit must have a complete
run of periods in each domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .panel import PanelDataset

OUTCOME_COLUMNS = ["domain", "unit", "time", "outcome"]
DOMAINS = ("target", "reference")


class IngestError(ValueError):
    """Raised on malformed input files."""


@dataclass(frozen=True)
class PanelBundle:
    """A parsed panel plus the covariate column names from the files."""

    dataset: PanelDataset
    x_names: tuple = ()
    z_names: tuple = ()


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise IngestError(f"file not found: {path}") from None
    except Exception as exc:
        raise IngestError(f"cannot parse {path}: {exc}") from exc


def _outcome_matrix(df: pd.DataFrame, domain: str, units: list, path) -> np.ndarray:
    sub = df[df["domain"] == domain]
    if sub.empty:
        raise IngestError(f"{path}: no rows for domain {domain!r}")
    times = sorted(sub["time"].unique())
    n_periods = len(times)
    if times != list(range(1, n_periods + 1)):
        raise IngestError(
            f"{path}: {domain} times must be 1..{n_periods}, got {times[:5]}..."
        )
    mat = np.full((len(units), n_periods), np.nan)
    index = {u: i for i, u in enumerate(units)}
    for unit, grp in sub.groupby("unit", sort=False):
        if unit not in index:
            raise IngestError(f"{path}: unit {unit!r} appears only in {domain}")
        if len(grp) != n_periods or sorted(grp["time"]) != times:
            raise IngestError(
                f"{path}: unit {unit!r} has {len(grp)} {domain} periods, "
                f"expected {n_periods}"
            )
        mat[index[unit], np.asarray(grp["time"], dtype=int) - 1] = grp["outcome"]
    missing = [u for u in units if np.isnan(mat[index[u]]).any()]
    if missing:
        raise IngestError(f"{path}: missing {domain} rows for units {missing}")
    return mat


def _covariate_matrix(path, units: list, permissive: bool):
    if path is None:
        return np.zeros((len(units), 0)), ()
    df = _read_csv(path)
    if "unit" not in df.columns:
        raise IngestError(f"{path}: covariate file needs a 'unit' column")
    names = [c for c in df.columns if c != "unit"]
    if not names and not permissive:
        raise IngestError(f"{path}: covariate file has no covariate columns")
    dup = df["unit"].duplicated()
    if dup.any():
        raise IngestError(f"{path}: duplicate unit {df['unit'][dup].iloc[0]!r}")
    rows = df.set_index("unit")
    missing = [u for u in units if u not in rows.index]
    if missing:
        raise IngestError(f"{path}: missing covariates for units {missing}")
    mat = rows.loc[units, names].to_numpy(dtype=float)
    return mat, tuple(names)


def load_panel(outcomes_path, target_unit,
               covariates_target=None, covariates_reference=None,
               permissive: bool = False) -> PanelBundle:
    """Parse outcome and covariate CSVs into a panel.

    The declared target unit is mapped to the target row; donors keep
    their first-appearance order from the outcomes file.
    """
    df = _read_csv(outcomes_path)
    extra = [c for c in df.columns if c not in OUTCOME_COLUMNS]
    if extra and not permissive:
        raise IngestError(
            f"{outcomes_path}: unknown columns {extra} (pass permissive to ignore)"
        )
    missing = [c for c in OUTCOME_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"{outcomes_path}: missing columns {missing}")
    bad_domain = set(df["domain"].unique()) - set(DOMAINS)
    if bad_domain:
        raise IngestError(f"{outcomes_path}: unknown domain values {sorted(bad_domain)}")
    if not np.issubdtype(np.asarray(df["time"]).dtype, np.integer):
        raise IngestError(f"{outcomes_path}: time column must be integer")

    units_in_order = list(dict.fromkeys(df["unit"]))
    if target_unit not in units_in_order:
        raise IngestError(f"target unit {target_unit!r} not present in {outcomes_path}")
    units = [target_unit] + [u for u in units_in_order if u != target_unit]

    Y = _outcome_matrix(df, "target", units, outcomes_path)
    F = _outcome_matrix(df, "reference", units, outcomes_path)
    X, x_names = _covariate_matrix(covariates_target, units, permissive)
    Z, z_names = _covariate_matrix(covariates_reference, units, permissive)
    dataset = PanelDataset(unit_ids=tuple(units), Y=Y, F=F, X=X, Z=Z)
    return PanelBundle(dataset=dataset, x_names=x_names, z_names=z_names)


def write_panel(bundle: PanelBundle, outcomes_path,
                covariates_target=None, covariates_reference=None) -> None:
    """Export a panel back to the documented CSV schemas."""
    ds = bundle.dataset
    rows = []
    for domain, mat in (("target", ds.Y), ("reference", ds.F)):
        for i, unit in enumerate(ds.unit_ids):
            for t in range(mat.shape[1]):
                rows.append((domain, unit, t + 1, mat[i, t]))
    pd.DataFrame(rows, columns=OUTCOME_COLUMNS).to_csv(outcomes_path, index=False)

    for path, mat, names in ((covariates_target, ds.X, bundle.x_names),
                             (covariates_reference, ds.Z, bundle.z_names)):
        if path is None:
            continue
        names = list(names) or [f"c{j + 1}" for j in range(mat.shape[1])]
        df = pd.DataFrame(mat, columns=names)
        df.insert(0, "unit", ds.unit_ids)
        df.to_csv(path, index=False)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False,
                                     allow_nan=True) + "\n", encoding="utf-8")


def fusion_report(result, percent_scale: bool = False) -> dict:
    """JSON-serializable summary of a fusion run."""
    scale = 100.0 if percent_scale else 1.0
    rep = {
        "psi_hat_sc": result.psi_hat_sc * scale,
        "weights": result.weights_by_unit,
        "budget": (dict(zip(("b_F", "b_Z", "b_X"), result.b_star.as_tuple()))
                   if result.b_star is not None else None),
        "nse_F": result.nse_F,
        "nse_Z": result.nse_Z,
        "nse_X": result.nse_X,
        "baseline_nse_Z": result.baseline_nse_Z,
        "baseline_nse_X": result.baseline_nse_X,
        "gap_series_target": [float(v) for v in result.gap_series_target],
        "gap_series_reference": [float(v) for v in result.gap_series_reference],
        "per_budget_table": [
            {"b_F": b.b_F, "b_Z": b.b_Z, "b_X": b.b_X,
             "nse_F": (None if np.isnan(nf) else nf), "feasible": bool(feas)}
            for b, nf, feas in result.per_budget_table
        ],
    }
    return rep


def write_gaps_csv(result, path) -> None:
    """Gap series from both domains in tidy form."""
    rows = []
    for domain, series in (("target", result.gap_series_target),
                           ("reference", result.gap_series_reference)):
        for t, v in enumerate(series, start=1):
            rows.append((domain, t, float(v)))
    pd.DataFrame(rows, columns=["domain", "time", "gap"]).to_csv(path, index=False)


def covariate_balance(bundle: PanelBundle, result, normalized) -> list[dict]:
    """Target vs synthetic vs donor-average covariate means.

    ``normalized`` is the dataset in the matching space (after covariate
    normalization), so the table mirrors what the optimizer saw.
    """
    w = result.w_star.w
    table = []
    for names, mat, domain in ((bundle.x_names, normalized.X, "target"),
                               (bundle.z_names, normalized.Z, "reference")):
        names = list(names) or [f"c{j + 1}" for j in range(mat.shape[1])]
        for j, name in enumerate(names):
            table.append({
                "domain": domain,
                "covariate": name,
                "target": float(mat[0, j]),
                "synthetic": float(w @ mat[1:, j]),
                "donor_mean": float(mat[1:, j].mean()),
            })
    return table
