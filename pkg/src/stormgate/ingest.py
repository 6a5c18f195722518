"""Raw outage and METAR ingestion.

Outage feeds arrive as county totals on a 15-minute grid and are collapsed to
hours with the max-concurrency rule; station reports are resampled to hourly
records with parameter-specific aggregation, then wind is split into u/v.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

KT_TO_MS = 0.514444
EARTH_RADIUS_M = 6_371_008.8

MEAN_PARAMS = ("tmpf", "dwpf", "relh", "alti", "mslp")
FFILL_PARAMS = ("tmpf", "dwpf", "relh", "drct", "sknt", "alti", "mslp")
WX_CODES = ("TS", "SQ", "HR")
WEATHER_COLUMNS = (
    "station_id", "timestamp_utc", "tmpf", "dwpf", "relh", "drct",
    "sknt", "p01i", "alti", "mslp", "gust", "wxcodes",
)
HOURLY_COLUMNS = (
    "station_id", "hour", "tmpf", "dwpf", "relh", "drct", "sknt", "p01i",
    "alti", "mslp", "gust", "u", "v", "ts_flag", "sq_flag", "hr_flag",
)


class IngestError(ValueError):
    """Malformed or inconsistent raw input."""


@dataclass
class OutageHourlyGrid:
    """County x hour outage counts after max-concurrency aggregation.

    ``values`` holds NaN wherever ``missing`` is set.
    """

    counties: list
    hours: pd.DatetimeIndex
    values: np.ndarray
    missing: np.ndarray
    chosen_tick: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.values.shape != (len(self.counties), len(self.hours)):
            raise IngestError("values shape does not match counties x hours")
        check_contiguous(self.hours)

    @property
    def state_total(self) -> np.ndarray:
        """Hourly sum over counties; NaN for hours where every county is missing."""
        tot = np.nansum(self.values, axis=0)
        tot[self.missing.all(axis=0)] = np.nan
        return tot

    def to_frame(self) -> pd.DataFrame:
        c, h = np.meshgrid(np.arange(len(self.counties)), np.arange(len(self.hours)), indexing="ij")
        return pd.DataFrame({
            "county_id": np.asarray(self.counties, dtype=object)[c.ravel()],
            "hour": self.hours[h.ravel()],
            "customers_out": self.values.ravel(),
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "OutageHourlyGrid":
        df = df.copy()
        df["hour"] = pd.to_datetime(df["hour"], utc=True)
        wide = df.pivot(index="county_id", columns="hour", values="customers_out")
        wide = wide.sort_index()
        hours = pd.DatetimeIndex(wide.columns)
        vals = wide.to_numpy(dtype=float)
        return cls(list(wide.index), hours, vals, np.isnan(vals))


def check_contiguous(hours) -> None:
    """Raise unless ``hours`` is strictly increasing at exactly one-hour spacing."""
    idx = pd.DatetimeIndex(hours)
    if len(idx) < 2:
        return
    step = np.diff(idx.asi8)
    if not np.all(step == 3_600_000_000_000 // _unit_divisor(idx)):
        raise IngestError("hour axis is not contiguous at 1 h spacing")


def _unit_divisor(idx: pd.DatetimeIndex) -> int:
    unit = np.datetime_data(idx.values.dtype)[0]
    return {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}[unit]


def fill_short_gaps(values, max_gap: int = 4, hours=None):
    """Linearly interpolate interior missing runs of at most ``max_gap`` hours.

    Parameters
    ----------
    values : array-like
        Hourly series with NaN marking missing hours.
    max_gap : int
        Longest run (in hours) that is filled.
    hours : DatetimeIndex, optional
        Hour axis; validated for contiguity when given.

    Returns
    -------
    filled : ndarray
        Copy of ``values`` with short interior gaps filled.
    long_gap : ndarray of bool
        True where a value is still missing because its run is too long or
        touches the start/end of the series.
    """
    if hours is not None:
        check_contiguous(hours)
    y = np.array(values, dtype=float)
    miss = np.isnan(y)
    n = len(y)
    i = 0
    while i < n:
        if not miss[i]:
            i += 1
            continue
        j = i
        while j < n and miss[j]:
            j += 1
        run = j - i
        if i > 0 and j < n and run <= max_gap:
            left, right = y[i - 1], y[j]
            frac = np.arange(1, run + 1) / (run + 1)
            y[i:j] = left + (right - left) * frac
        i = j
    return y, np.isnan(y)


def aggregate_max_concurrency(records: pd.DataFrame) -> OutageHourlyGrid:
    """Collapse 15-minute county counts to hours at the max statewide tick.

    ``records`` needs columns ``county_id``, ``timestamp`` (or
    ``timestamp_utc``) and ``customers_out``. Within each hour the tick with
    the largest statewide sum over non-missing counties is chosen (earliest on
    ties) and every county's value at that tick is emitted. Hours with no
    observed tick are missing.
    """
    df = records.rename(columns={"timestamp_utc": "timestamp"})
    ts = pd.to_datetime(df["timestamp"], utc=True)
    if (ts.dt.minute % 15 != 0).any() or (ts.dt.second != 0).any():
        raise IngestError("outage timestamps must fall on :00/:15/:30/:45")
    cust = pd.to_numeric(df["customers_out"], errors="coerce")
    if (cust < 0).any():
        raise IngestError("customers_out must be non-negative")
    df = pd.DataFrame({"county_id": df["county_id"].astype(str), "timestamp": ts, "customers_out": cust})
    wide = df.groupby(["timestamp", "county_id"])["customers_out"].first().unstack("county_id")
    wide = wide.sort_index()
    counties = sorted(wide.columns)
    wide = wide[counties]
    start = wide.index.min().floor("h")
    end = wide.index.max().floor("h")
    hours = pd.date_range(start, end, freq="h")
    ticks = pd.date_range(start, end + pd.Timedelta(minutes=45), freq="15min")
    wide = wide.reindex(ticks)
    q = wide.to_numpy(dtype=float).reshape(len(hours), 4, len(counties))
    observed = ~np.isnan(q)
    tick_ok = observed.any(axis=2)
    totals = np.where(tick_ok, np.nansum(q, axis=2), -np.inf)
    best = np.argmax(totals, axis=1)  # first maximum wins
    out = q[np.arange(len(hours)), best, :].T
    hour_missing = ~tick_ok.any(axis=1)
    out[:, hour_missing] = np.nan
    best = np.where(hour_missing, -1, best)
    return OutageHourlyGrid(counties, hours, out, np.isnan(out), chosen_tick=best)


def decompose_wind(speed_kt, direction_deg):
    """Meteorological speed/direction to eastward/northward components in m/s."""
    v_ms = np.asarray(speed_kt, dtype=float) * KT_TO_MS
    theta = np.deg2rad(np.asarray(direction_deg, dtype=float))
    return -v_ms * np.sin(theta), -v_ms * np.cos(theta)


def recover_wind(u, v):
    """Inverse of :func:`decompose_wind`: speed in m/s and direction in degrees.

    Calm winds (zero speed) get direction 0.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    speed = np.hypot(u, v)
    theta = np.mod(np.degrees(np.arctan2(-u, -v)), 360.0)
    theta = np.where(speed == 0, 0.0, theta)
    # mod can round 359.99999... up to exactly 360
    theta = np.where(theta >= 360.0, 0.0, theta)
    if theta.ndim == 0:
        return float(speed), float(theta)
    return speed, theta


def parse_wxcodes(cell) -> set:
    if cell is None or (isinstance(cell, float) and np.isnan(cell)):
        return set()
    return {c.strip().upper() for c in str(cell).split("|") if c.strip()}


def resample_weather_hourly(records: pd.DataFrame, start=None, end=None, ffill_hours: int = 2) -> pd.DataFrame:
    """Aggregate raw station reports to one row per station and hour.

    Means for temperature, dew point, humidity and pressures; max for wind
    speed, gust and precipitation; direction taken at the report with the
    hour's maximum wind speed; boolean weather-code flags. Missing hours are
    forward-filled up to ``ffill_hours`` for every parameter except gust,
    precipitation (0 when unreported) and the flags.
    """
    df = records.rename(columns={"timestamp": "timestamp_utc"}).copy()
    df["timestamp_utc"] = pd.to_datetime(df["timestamp_utc"], utc=True)
    df["station_id"] = df["station_id"].astype(str)
    for col in ("tmpf", "dwpf", "relh", "drct", "sknt", "p01i", "alti", "mslp", "gust"):
        df[col] = pd.to_numeric(df[col], errors="coerce") if col in df else np.nan
    df = df.sort_values(["station_id", "timestamp_utc"], kind="stable")
    df["hour"] = df["timestamp_utc"].dt.floor("h")
    codes = df["wxcodes"].map(parse_wxcodes) if "wxcodes" in df else pd.Series([set()] * len(df), index=df.index)
    for code in WX_CODES:
        df[code.lower() + "_flag"] = codes.map(lambda s, c=code: c in s)

    g = df.groupby(["station_id", "hour"], sort=True)
    agg = g[list(MEAN_PARAMS)].mean()
    agg["sknt"] = g["sknt"].max()
    agg["gust"] = g["gust"].max()
    agg["p01i"] = g["p01i"].max()
    for flag in ("ts_flag", "sq_flag", "hr_flag"):
        agg[flag] = g[flag].any()

    # direction at the first report carrying the hour's max speed (with a direction)
    has = df.dropna(subset=["sknt", "drct"])
    if len(has):
        hmax = has.groupby(["station_id", "hour"])["sknt"].transform("max")
        at_max = has[has["sknt"] == hmax]
        first = at_max.groupby(["station_id", "hour"], sort=True).head(1)
        drct = first.set_index(["station_id", "hour"])["drct"]
        agg["drct"] = drct.reindex(agg.index)
    else:
        agg["drct"] = np.nan
    # direction is only meaningful alongside the max speed it was paired with
    agg.loc[agg["sknt"].isna(), "drct"] = np.nan

    lo = pd.Timestamp(start) if start is not None else df["hour"].min()
    hi = pd.Timestamp(end) if end is not None else df["hour"].max()
    lo = lo.tz_localize("UTC") if lo.tzinfo is None else lo
    hi = hi.tz_localize("UTC") if hi.tzinfo is None else hi
    hours = pd.date_range(lo, hi, freq="h")
    stations = sorted(df["station_id"].unique())

    frames = []
    for sid in stations:
        part = agg.xs(sid, level="station_id").reindex(hours)
        for col in FFILL_PARAMS:
            part[col] = part[col].ffill(limit=ffill_hours)
        part["p01i"] = part["p01i"].fillna(0.0)
        for flag in ("ts_flag", "sq_flag", "hr_flag"):
            part[flag] = part[flag].eq(True)
        part.insert(0, "station_id", sid)
        part.index.name = "hour"
        frames.append(part.reset_index())
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=HOURLY_COLUMNS)
    ok = out["sknt"].notna() & out["drct"].notna()
    u, v = decompose_wind(out["sknt"].fillna(0.0), out["drct"].fillna(0.0))
    out["u"] = np.where(ok, u, np.nan)
    out["v"] = np.where(ok, v, np.nan)
    return out[list(HOURLY_COLUMNS)]


def project_lonlat(lon, lat, lon0: float | None = None, lat0: float | None = None):
    """Local equirectangular projection to meters about (lon0, lat0).

    The origin defaults to the centroid of the given points.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    lon0 = float(np.mean(lon)) if lon0 is None else lon0
    lat0 = float(np.mean(lat)) if lat0 is None else lat0
    x = EARTH_RADIUS_M * np.deg2rad(lon - lon0) * np.cos(np.deg2rad(lat0))
    y = EARTH_RADIUS_M * np.deg2rad(lat - lat0)
    return x, y


# ---------------------------------------------------------------- CSV readers

def read_outages_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"county_id": str})
    missing = {"county_id", "timestamp_utc", "customers_out"} - set(df.columns)
    if missing:
        raise IngestError(f"{path}: missing columns {sorted(missing)}")
    return df


def read_weather_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"station_id": str, "wxcodes": str}, keep_default_na=True)
    missing = set(WEATHER_COLUMNS) - set(df.columns)
    if missing:
        raise IngestError(f"{path}: missing columns {sorted(missing)}")
    return df


def read_stations_csv(path, lon0=None, lat0=None) -> pd.DataFrame:
    """Station table with projected ``x``/``y`` (m) added when absent."""
    df = pd.read_csv(path, dtype={"station_id": str})
    if df["station_id"].duplicated().any():
        raise IngestError(f"{path}: duplicate station ids")
    if "x" not in df or "y" not in df:
        df["x"], df["y"] = project_lonlat(df["lon"], df["lat"], lon0, lat0)
    if not np.isfinite(df[["x", "y"]].to_numpy()).all():
        raise IngestError(f"{path}: non-finite station coordinates")
    return df


def write_hourly_outages(grid: OutageHourlyGrid, path: Path) -> None:
    df = grid.to_frame()
    df["hour"] = df["hour"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    df.to_csv(path, index=False)
