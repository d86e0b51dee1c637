"""Country x time panels: loading, filtering, imputation, z-scoring, stages.

Order used by :func:`preprocess`:
load -> filter_missing -> impute_linear -> filter_population ->
[stratify_stages] -> zscore_panel -> assemble_matrix.

For a stage run the z-scores are computed inside the stage window.
Column ``v * T + t`` of the assembled matrix holds variable ``v`` (in the
requested order) on day ``t``.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    AllFiltered,
    AlreadyStandardised,
    CoverageError,
    DateGap,
    DimensionMismatch,
    MissingMetadata,
    NotImputed,
    ParseError,
    TooFewObserved,
    ZeroVariance,
)
from .geometry import DataMatrix

MISSING_THRESHOLD = 0.20
MIN_POPULATION = 1_000_000
DEFAULT_VARIABLES = ("new_cases_pmp", "new_deaths_pmp", "stringency_index")

STAGES = {
    1: (dt.date(2020, 3, 1), dt.date(2020, 6, 23)),
    2: (dt.date(2020, 6, 24), dt.date(2020, 10, 15)),
    3: (dt.date(2020, 10, 16), dt.date(2021, 2, 6)),
    4: (dt.date(2021, 2, 7), dt.date(2021, 5, 29)),
}
FULL_RANGE = (STAGES[1][0], STAGES[4][1])


@dataclass(frozen=True)
class StageWindow:
    label: int
    start: dt.date
    end: dt.date

    def contains(self, day: dt.date) -> bool:
        return self.start <= day <= self.end


def stage_windows():
    return [StageWindow(k, *v) for k, v in STAGES.items()]


def stage_of(day: dt.date) -> int | None:
    for w in stage_windows():
        if w.contains(day):
            return w.label
    return None


@dataclass(frozen=True)
class Panel:
    """Aligned panel. ``variables[name]`` is a (countries x dates) array, NaN = missing.

    ``countries`` is a DataFrame indexed by country id with at least a
    ``population`` column (NaN when unknown).
    """

    countries: pd.DataFrame
    dates: tuple
    variables: dict
    provenance: tuple = ()
    standardised: bool = False
    dropped: tuple = ()

    @property
    def ids(self) -> tuple:
        return tuple(self.countries.index)

    @property
    def T(self) -> int:
        return len(self.dates)

    def select(self, keep: np.ndarray) -> "Panel":
        keep = np.asarray(keep, dtype=bool)
        gone = tuple(i for i, k in zip(self.ids, keep) if not k)
        return replace(
            self,
            countries=self.countries[keep],
            variables={k: v[keep] for k, v in self.variables.items()},
            dropped=self.dropped + gone,
        )

    def with_step(self, name, **params) -> "Panel":
        return replace(self, provenance=self.provenance + ({"step": name, **params},))

    def frame(self, variable) -> pd.DataFrame:
        """Wide frame in the input layout: one row per date, one column per country."""
        return pd.DataFrame(self.variables[variable].T, index=pd.Index(self.dates, name="date"),
                            columns=list(self.ids))


def _read_variable(path):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != "date":
        raise ParseError(path, 1, "header must start with 'date'")
    header = [h.strip() for h in rows[0]]
    countries = header[1:]
    if len(set(countries)) != len(countries):
        raise ParseError(path, 1, "duplicate country column")
    dates, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        try:
            dates.append(dt.date.fromisoformat(row[0].strip()))
        except ValueError:
            raise ParseError(path, line, f"bad date {row[0]!r}") from None
        parsed = []
        for cell in row[1:]:
            cell = cell.strip()
            if cell in ("", "NA"):
                parsed.append(np.nan)
                continue
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(path, line, f"bad value {cell!r}") from None
        values.append(parsed)
    if len(set(dates)) != len(dates):
        raise ParseError(path, 1, "duplicate dates")
    return pd.DataFrame(values, index=dates, columns=countries, dtype=np.float64)


def read_id_csv(path, **kwargs) -> pd.DataFrame:
    """``pandas.read_csv`` that keeps ids such as ``NA`` as text and parses floats exactly."""
    return pd.read_csv(path, keep_default_na=False, na_values=[""], dtype={"id": str},
                       float_precision="round_trip", **kwargs)


def _to_float(cell):
    try:
        return float(cell)
    except ValueError:
        return np.nan


def load_metadata(path) -> pd.DataFrame:
    """Read ``id,name,population[,income_group,lat,lon]``.

    Empty or ``NA`` cells in the numeric columns become NaN.
    """
    path = Path(path)
    try:
        meta = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:  # pandas raises several parser exceptions
        raise ParseError(path, 1, str(exc)) from None
    missing = {"id", "name", "population"} - set(meta.columns)
    if missing:
        raise ParseError(path, 1, f"missing columns {sorted(missing)}")
    meta["id"] = meta["id"].str.strip()
    dup = meta["id"].duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise ParseError(path, row + 2, f"duplicate id {meta['id'].iloc[row]!r}")
    for col in meta.columns:
        if col in ("id", "name", "income_group"):
            continue
        cells = meta[col].str.strip()
        cells = cells.where(~cells.isin(["", "NA"]))
        numeric = cells.map(_to_float, na_action="ignore").astype(np.float64)
        bad = numeric.isna() & cells.notna()
        if bad.any() and col in ("population", "lat", "lon"):
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(path, row + 2, f"{col}: not a number: {meta[col].iloc[row]!r}")
        if not bad.any():
            meta[col] = numeric.astype(np.float64)
    return meta.set_index("id")


def load_panel(paths: dict, date_range=None, metadata=None) -> Panel:
    """Read one wide CSV per variable and align them.

    Args:
        paths: variable name -> CSV path (header ``date,<id>,<id>,...``).
        date_range: inclusive (start, end) dates; defaults to the span
            covered by every file.
        metadata: optional path to the country metadata CSV.

    Countries are the union over files, sorted by id; a country absent from
    one file gets an all-missing series for that variable.
    """
    frames = {name: _read_variable(p) for name, p in paths.items()}
    if date_range is None:
        start = max(min(f.index) for f in frames.values())
        end = min(max(f.index) for f in frames.values())
    else:
        start, end = (d if isinstance(d, dt.date) else dt.date.fromisoformat(d) for d in date_range)
    if start > end:
        raise CoverageError(f"empty date range {start}..{end}")
    axis = tuple(start + dt.timedelta(days=i) for i in range((end - start).days + 1))
    ids = sorted(set().union(*(f.columns for f in frames.values())))
    variables = {}
    for name, frame in frames.items():
        if min(frame.index) > start or max(frame.index) < end:
            raise CoverageError(f"{paths[name]}: covers {min(frame.index)}..{max(frame.index)}, "
                                f"need {start}..{end}")
        window = frame[(frame.index >= start) & (frame.index <= end)]
        if len(window) != len(axis):
            present = set(window.index)
            gap = next(d for d in axis if d not in present)
            raise DateGap(f"{paths[name]}: no row for {gap}")
        variables[name] = window.sort_index().reindex(columns=ids).to_numpy().T.copy()
    if metadata is not None:
        meta = load_metadata(metadata).reindex(ids)
    else:
        meta = pd.DataFrame(index=pd.Index(ids, name="id"))
        meta["name"] = ids
        meta["population"] = np.nan
    meta.index.name = "id"
    panel = Panel(meta, axis, variables)
    return panel.with_step("load", start=str(start), end=str(end), variables=list(paths))


def missing_fractions(panel: Panel) -> dict:
    return {k: np.isnan(v).mean(axis=1) for k, v in panel.variables.items()}


def filter_missing(panel: Panel, threshold: float = MISSING_THRESHOLD) -> Panel:
    """Drop countries with more than ``threshold`` missing in any variable."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    keep = np.ones(len(panel.ids), dtype=bool)
    for frac in missing_fractions(panel).values():
        keep &= frac <= threshold
    if not keep.any():
        raise AllFiltered(f"every country exceeds {threshold:.0%} missing data")
    return panel.select(keep).with_step("filter_missing", threshold=threshold,
                                        dropped=[i for i, k in zip(panel.ids, keep) if not k])


def _interpolate(series):
    obs = np.flatnonzero(~np.isnan(series))
    t = np.arange(series.size)
    # np.interp holds the end values flat outside the observed range
    return np.interp(t, obs, series[obs])


def impute_linear(panel: Panel) -> Panel:
    """Fill gaps by linear interpolation in time, ends by the nearest observation."""
    out = {}
    for name, arr in panel.variables.items():
        filled = arr.copy()
        for r, series in enumerate(arr):
            n_obs = np.count_nonzero(~np.isnan(series))
            if n_obs < 2:
                raise TooFewObserved(panel.ids[r], name)
            if n_obs < series.size:
                filled[r] = _interpolate(series)
        out[name] = filled
    return replace(panel, variables=out).with_step("impute_linear")


def filter_population(panel: Panel, min_pop: float = MIN_POPULATION) -> Panel:
    """Drop countries with population strictly below ``min_pop``."""
    pop = panel.countries["population"].to_numpy(dtype=np.float64)
    if min_pop > 0 and np.isnan(pop).any():
        raise MissingMetadata(f"population unknown for {panel.ids[int(np.argmax(np.isnan(pop)))]!r}")
    keep = np.ones(pop.size, dtype=bool) if min_pop <= 0 else pop >= min_pop
    if not keep.any():
        raise AllFiltered(f"no country has population >= {min_pop:g}")
    return panel.select(keep).with_step("filter_population", min_pop=min_pop,
                                        dropped=[i for i, k in zip(panel.ids, keep) if not k])


def zscore_panel(panel: Panel, force: bool = False, scope: str = "full") -> Panel:
    """Standardise each variable with one mean and sd pooled over all cells.

    Uses the sample standard deviation (ddof=1). Refuses an already
    standardised panel unless ``force`` is set. ``scope`` is only recorded in
    the provenance (``"full"`` or ``"stage N"``).
    """
    if panel.standardised and not force:
        raise AlreadyStandardised("panel is already z-scored")
    out = {}
    for name, arr in panel.variables.items():
        if np.isnan(arr).any():
            raise NotImputed(f"variable {name!r} still has missing cells")
        sd = arr.std(ddof=1)
        if not sd > 0:
            raise ZeroVariance(name)
        out[name] = (arr - arr.mean()) / sd
    return replace(panel, variables=out, standardised=True).with_step("zscore", scope=scope)


def stratify_stages(panel: Panel) -> dict:
    """Split into the four stage windows; returns {stage number: Panel}."""
    if not panel.dates or panel.dates[0] > FULL_RANGE[0] or panel.dates[-1] < FULL_RANGE[1]:
        raise CoverageError(f"panel must span {FULL_RANGE[0]}..{FULL_RANGE[1]}")
    out = {}
    for w in stage_windows():
        idx = [t for t, d in enumerate(panel.dates) if w.contains(d)]
        out[w.label] = replace(
            panel,
            dates=tuple(panel.dates[t] for t in idx),
            variables={k: v[:, idx] for k, v in panel.variables.items()},
        ).with_step("stage", stage=w.label, start=str(w.start), end=str(w.end))
    return out


def assemble_matrix(panel: Panel, variable_order=None) -> DataMatrix:
    """One row per country, columns = the variables' series concatenated in order."""
    order = list(variable_order or panel.variables)
    blocks = [panel.variables[v] for v in order]
    X = np.hstack(blocks)
    if np.isnan(X).any():
        raise NotImputed("panel has missing cells; impute before assembling")
    return DataMatrix(X, panel.ids)


def matrix_cell(panel: Panel, variable_order, row: int, col: int):
    """(country id, variable, date) for a cell of the assembled matrix."""
    order = list(variable_order or panel.variables)
    v, t = divmod(col, panel.T)
    return panel.ids[row], order[v], panel.dates[t]


def preprocess(panel: Panel, stage=None, missing_threshold=MISSING_THRESHOLD,
               min_pop=MIN_POPULATION) -> Panel:
    """Run the fixed preprocessing chain on a loaded panel.

    ``stage`` is None/"full" for the whole window or 1-4 for one stage.
    Missingness is judged on the loaded window before any stage split.
    """
    p = filter_missing(panel, missing_threshold)
    p = impute_linear(p)
    p = filter_population(p, min_pop)
    if stage in (None, "full"):
        return zscore_panel(p)
    p = stratify_stages(p)[int(stage)]
    return zscore_panel(p, scope=f"stage {int(stage)}")


def write_panel(panel: Panel, directory, variable_order=None) -> list:
    """Write one wide CSV per variable; returns the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in variable_order or panel.variables:
        frame = panel.frame(name)
        frame.index = [d.isoformat() for d in frame.index]
        frame.index.name = "date"
        path = out / f"panel_{name}.csv"
        frame.to_csv(path, float_format="%.17g", lineterminator="\n")
        paths.append(path)
    return paths


def write_matrix(data: DataMatrix, path) -> Path:
    """CSV with header ``id,x1,...,xD`` and one row per observation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = data.row_ids or tuple(str(i) for i in range(data.n))
    frame = pd.DataFrame(data.values, index=pd.Index(ids, name="id"),
                         columns=[f"x{j + 1}" for j in range(data.D)])
    frame.to_csv(path, float_format="%.17g", lineterminator="\n")
    return path


def read_matrix(path) -> DataMatrix:
    path = Path(path)
    try:
        frame = read_id_csv(path, index_col=0)
    except Exception as exc:
        raise ParseError(path, 1, str(exc)) from None
    if frame.index.name != "id":
        raise ParseError(path, 1, "first column must be 'id'")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError:
        raise ParseError(path, 2, "non-numeric cell") from None
    if values.ndim != 2 or values.shape[1] == 0:
        raise DimensionMismatch(f"{path}: no value columns")
    return DataMatrix(values, tuple(str(i) for i in frame.index))
