"""Causal county x hour feature matrix, targets, sampling and screening.

Arrays are laid out hours x counties (x features). Temporal operators only
look backwards; rolling sums and IDW averages are accumulated with explicit
elementwise adds so truncating the future leaves past values bit-identical.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

LAGS = (6, 12, 24, 48)
WINDOWS = (6, 12, 24, 48)
HORIZON = 48

RAW_FEATURES = ["dwpf", "tmpf", "alti", "mslp", "gust", "p01i", "sknt", "drct_u", "drct_v",
                "relh", "relh_grad", "sq_flag", "ts_flag", "hr_flag"]
LAG_SOURCES = ["dwpf", "tmpf", "drct_u", "drct_v"]
ROLLING_SOURCES = [("p01i", "sum"), ("alti", "mean"), ("mslp", "mean"), ("relh", "mean"),
                   ("gust", "max"), ("sknt", "max"), ("relh_grad", "max"),
                   ("ts_flag", "sum"), ("hr_flag", "sum"), ("sq_flag", "sum")]
IDW_SOURCES = ["alti", "dwpf", "drct_u", "drct_v", "tmpf_lag_6h", "drct_v_lag_6h",
               "drct_u_lag_12h", "dwpf_lag_12h", "relh_rolling_mean_48h",
               "gust_rolling_max_24h", "sknt_rolling_max_48h", "ts_flag_rolling_sum_12h",
               "p01i_rolling_sum_24h"]
STATIC_FEATURES = ["day_of_week_num", "population_density", "x", "y"]

LAG_FEATURES = [f"{p}_lag_{L}h" for p in LAG_SOURCES for L in LAGS]
ROLLING_FEATURES = [f"{p}_rolling_{s}_{W}h" for p, s in ROLLING_SOURCES for W in WINDOWS]
IDW_FEATURES = [f"IDW_{s}" for s in IDW_SOURCES]
FEATURE_NAMES = (RAW_FEATURES + LAG_FEATURES + ROLLING_FEATURES + IDW_FEATURES
                 + STATIC_FEATURES + ["county_encoded"])

# input set of the recurrent regressor, in model column order
LSTM_FEATURES = ["dwpf", "tmpf", "relh", "alti", "mslp", "gust", "p01i", "sknt", "drct_u",
                 "drct_v", "relh_grad", "ts_flag", "hr_flag", "dwpf_lag_6h", "dwpf_lag_12h",
                 "dwpf_lag_24h", "dwpf_lag_48h", "gust_rolling_max_6h",
                 "IDW_ts_flag_rolling_sum_12h", "IDW_dwpf", "IDW_alti", "IDW_drct_u",
                 "IDW_drct_v", "IDW_tmpf_lag_6h", "IDW_drct_v_lag_6h", "IDW_dwpf_lag_12h",
                 "IDW_drct_u_lag_12h", "IDW_p01i_rolling_sum_24h", "IDW_gust_rolling_max_24h",
                 "IDW_sknt_rolling_max_48h", "IDW_relh_rolling_mean_48h", "day_of_week_num",
                 "population_density", "county_encoded", "y"]
TARGETS = ["flag48", "log_mag48"]


@dataclass(frozen=True)
class IdwConfig:
    k: int = 5
    power: float = 2.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("IDW needs k >= 1")
        if not self.power > 0:
            raise ValueError("IDW power must be positive")


# ---------------------------------------------------------------- temporal

def make_lag(series, L: int) -> np.ndarray:
    """Shift an hourly array (hours first) back by ``L`` hours; the first ``L`` rows are NaN."""
    x = np.asarray(series, dtype=float)
    out = np.full_like(x, np.nan)
    if L < len(x):
        out[L:] = x[:len(x) - L]
    return out


def make_rolling(series, W: int, stat: str) -> np.ndarray:
    """Trailing window statistic over hours ``(t-W, t]``.

    Emitted only when all ``W`` values are present. Accumulation runs
    sequentially over window offsets, so each output depends on its own
    window only (not on the array length).
    """
    x = np.asarray(series, dtype=float)
    out = np.full_like(x, np.nan)
    H = len(x)
    if W > H:
        return out
    n = H - W + 1
    acc = x[W - 1:].copy()
    for k in range(1, W):
        seg = x[W - 1 - k:W - 1 - k + n]
        if stat == "max":
            acc = np.maximum(acc, seg)
        elif stat in ("sum", "mean"):
            acc = acc + seg
        else:
            raise ValueError(f"unknown rolling statistic {stat!r}")
    if stat == "mean":
        acc = acc / W
    out[W - 1:] = acc
    return out


# ------------------------------------------------------------------ spatial

def idw_neighbors(xy, k: int = 5):
    """Indices and distances of the ``k`` nearest other points (self excluded)."""
    xy = np.asarray(xy, dtype=float)
    k = min(k, len(xy) - 1)
    if k < 1:
        return np.zeros((len(xy), 0), dtype=int), np.zeros((len(xy), 0))
    d, j = cKDTree(xy).query(xy, k=k + 1)
    idx = np.empty((len(xy), k), dtype=int)
    dist = np.empty((len(xy), k))
    for i in range(len(xy)):
        keep = j[i] != i
        idx[i] = j[i][keep][:k]
        dist[i] = d[i][keep][:k]
    return idx, dist


def idw_aggregate(values, idx, dist, power: float = 2.0) -> np.ndarray:
    """Inverse-distance weighted mean of neighbor values.

    ``values`` has counties on the last axis; ``idx``/``dist`` come from
    :func:`idw_neighbors`. Missing neighbors are skipped and weights
    renormalized; no valid neighbor gives NaN. A zero distance returns that
    neighbor's value.
    """
    z = np.asarray(values, dtype=float)
    C, k = idx.shape
    num = np.zeros(z.shape[:-1] + (C,))
    den = np.zeros_like(num)
    exact = np.full_like(num, np.nan)
    for j in range(k):
        zj = z[..., idx[:, j]]
        ok = np.isfinite(zj)
        with np.errstate(divide="ignore"):
            w = np.where(dist[:, j] > 0, dist[:, j] ** -power, 0.0)
        num = num + np.where(ok, w * np.where(ok, zj, 0.0), 0.0)
        den = den + np.where(ok, w, 0.0)
        hit = (dist[:, j] == 0) & ok & np.isnan(exact)
        exact = np.where(hit, zj, exact)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out = np.where(den > 0, out, np.nan)
    return np.where(np.isfinite(exact), exact, out)


# ------------------------------------------------------------------ static

def county_encoding(counties) -> dict:
    """Stable integer code per county id (rank in sorted string order)."""
    return {c: i for i, c in enumerate(sorted(map(str, counties)))}


def attach_static(counties, hours, statics: pd.DataFrame) -> dict:
    """Static and calendar columns as hours x counties arrays.

    ``statics`` needs county_id, lon, lat, population, area_km2.
    """
    st = statics.assign(county_id=statics["county_id"].astype(str)).set_index("county_id")
    missing = [c for c in map(str, counties) if c not in st.index]
    if missing:
        raise KeyError(f"county {missing[0]!r} missing from static table")
    st = st.loc[[str(c) for c in counties]]
    H = len(hours)
    enc = county_encoding(counties)
    dow = pd.DatetimeIndex(hours).dayofweek.to_numpy().astype(float)
    tile = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (H, len(counties))).copy()
    return {
        "day_of_week_num": np.repeat(dow[:, None], len(counties), axis=1),
        "population_density": tile(st["population"].to_numpy(float) / st["area_km2"].to_numpy(float)),
        "x": tile(st["lon"].to_numpy(float)),
        "y": tile(st["lat"].to_numpy(float)),
        "county_encoded": tile([enc[str(c)] for c in counties]),
    }


# ----------------------------------------------------------------- assembly

@dataclass
class FeatureSet:
    hours: pd.DatetimeIndex
    counties: list
    names: list
    values: np.ndarray  # hours x counties x features

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.names.index(name)]

    def to_frame(self, targets: dict | None = None) -> pd.DataFrame:
        """Long form, rows ordered by hour then county."""
        H, C, F = self.values.shape
        df = pd.DataFrame(self.values.reshape(H * C, F), columns=self.names)
        df.insert(0, "hour", np.repeat(self.hours.to_numpy(), C))
        df.insert(0, "county_id", np.tile(np.asarray(self.counties, dtype=object), H))
        for k, v in (targets or {}).items():
            df[k] = np.asarray(v, dtype=float).reshape(H * C)
        return df


def build_features(params: dict, hours, counties, statics: pd.DataFrame, centroid_xy,
                   idw: IdwConfig = IdwConfig()) -> FeatureSet:
    """Assemble every engineered feature.

    Parameters
    ----------
    params : dict
        County-level hourly arrays (hours x counties) keyed by raw feature
        name (``RAW_FEATURES``).
    centroid_xy : array (counties, 2)
        Projected centroid coordinates in meters, used for IDW distances.
    """
    hours = pd.DatetimeIndex(hours)
    cols = {}
    for name in RAW_FEATURES:
        if name not in params:
            raise KeyError(f"interpolated parameter {name!r} missing")
        cols[name] = np.asarray(params[name], dtype=float)
    for p in LAG_SOURCES:
        for L in LAGS:
            cols[f"{p}_lag_{L}h"] = make_lag(cols[p], L)
    for p, s in ROLLING_SOURCES:
        for W in WINDOWS:
            cols[f"{p}_rolling_{s}_{W}h"] = make_rolling(cols[p], W, s)
    idx, dist = idw_neighbors(centroid_xy, idw.k)
    for s in IDW_SOURCES:
        cols[f"IDW_{s}"] = idw_aggregate(cols[s], idx, dist, idw.power)
    cols.update(attach_static(counties, hours, statics))
    values = np.stack([cols[n] for n in FEATURE_NAMES], axis=-1)
    return FeatureSet(hours, list(counties), list(FEATURE_NAMES), values)


# ------------------------------------------------------------------ targets

@dataclass
class TargetInfo:
    flag48: np.ndarray
    log_mag48: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    threshold: np.ndarray
    degenerate: np.ndarray


def build_targets(outages, train_mask, horizon: int = HORIZON) -> TargetInfo:
    """Per-county anomaly flag and log1p magnitude at ``t + horizon``.

    ``outages`` is hours x counties (NaN = missing); ``train_mask`` selects
    the hours whose outages define each county's min-max normalization and
    90th-percentile threshold. Counties whose threshold is not positive fall
    back to flagging any nonzero outage.
    """
    Y = np.asarray(outages, dtype=float)
    train_mask = np.asarray(train_mask, dtype=bool)
    H, C = Y.shape
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    fut = np.full_like(Y, np.nan)
    if horizon < H:
        fut[:H - horizon] = Y[horizon:]
    tr = Y[train_mask]
    lo = np.nanmin(tr, axis=0)
    hi = np.nanmax(tr, axis=0)
    span = hi - lo
    norm_tr = np.where(span > 0, (tr - lo) / np.where(span > 0, span, 1.0), 0.0)
    norm_tr[np.isnan(tr)] = np.nan
    thr = np.nanpercentile(norm_tr, 90, axis=0)
    degenerate = ~(thr > 0)
    norm_fut = np.where(span > 0, (fut - lo) / np.where(span > 0, span, 1.0), 0.0)
    flag = np.where(degenerate, fut > 0, norm_fut >= thr).astype(float)
    flag[np.isnan(fut)] = np.nan
    logm = np.log1p(fut)
    return TargetInfo(flag, logm, lo, hi, thr, degenerate)


# ------------------------------------------------------------- undersample

def event_windows(flags, window: int = HORIZON, min_anoms: int = 3) -> np.ndarray:
    """Boolean mask of hours inside qualifying anomaly-cluster windows.

    Positives closer than ``window`` hours chain into one cluster whose
    window spans ``[first - window, last + window]``; the window qualifies
    when it holds at least ``min_anoms`` positives. Works per column.
    """
    F = np.asarray(flags, dtype=float)
    one_d = F.ndim == 1
    F = F[:, None] if one_d else F
    H, C = F.shape
    out = np.zeros((H, C), dtype=bool)
    for c in range(C):
        pos = np.flatnonzero(F[:, c] == 1)
        if len(pos) == 0:
            continue
        breaks = np.flatnonzero(np.diff(pos) > window)
        starts = np.r_[0, breaks + 1]
        ends = np.r_[breaks, len(pos) - 1]
        for a, b in zip(starts, ends):
            lo, hi = pos[a] - window, pos[b] + window
            n_in = np.count_nonzero((pos >= lo) & (pos <= hi))
            if n_in >= min_anoms:
                out[max(lo, 0):min(hi, H - 1) + 1, c] = True
    return out[:, 0] if one_d else out


def undersample_event_windows(flags, window: int = HORIZON, min_anoms: int = 3,
                              neg_keep: float = 0.1, seed: int = 0) -> np.ndarray:
    """Keep mask: all positives, negatives in qualifying windows, and a seeded
    fraction ``neg_keep`` of the remaining negatives. Rows with a missing
    flag are never kept."""
    F = np.asarray(flags, dtype=float)
    inwin = event_windows(F, window, min_anoms)
    u = np.random.default_rng(seed).random(F.shape)
    keep = (F == 1) | ((F == 0) & (inwin | (u < neg_keep)))
    return keep


def neg_keep_for_share(flags, window: int = HORIZON, min_anoms: int = 3,
                       share: float = 0.34) -> float:
    """Outside-window negative keep rate giving an expected positive share."""
    F = np.asarray(flags, dtype=float)
    inwin = event_windows(F, window, min_anoms)
    P = np.count_nonzero(F == 1)
    n_in = np.count_nonzero((F == 0) & inwin)
    n_out = np.count_nonzero((F == 0) & ~inwin)
    if P == 0 or n_out == 0:
        return 1.0
    return float(np.clip((P / share - P - n_in) / n_out, 0.0, 1.0))


# ------------------------------------------------------------------ scaling

@dataclass
class ScalerParams:
    names: list
    minimum: np.ndarray
    maximum: np.ndarray
    median: np.ndarray  # of scaled training values, used to impute NaN

    def as_dict(self) -> dict:
        return {"names": list(self.names), "minimum": self.minimum.tolist(),
                "maximum": self.maximum.tolist(), "median": self.median.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(list(d["names"]), np.asarray(d["minimum"], float),
                   np.asarray(d["maximum"], float), np.asarray(d["median"], float))

    def subset(self, names) -> "ScalerParams":
        ix = [self.names.index(n) for n in names]
        return ScalerParams(list(names), self.minimum[ix], self.maximum[ix], self.median[ix])


def fit_scaler(X, names) -> ScalerParams:
    """Per-column min and max over training rows (NaN ignored)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero rows")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        lo = np.nanmin(X, axis=0)
        hi = np.nanmax(X, axis=0)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, lo)
    params = ScalerParams(list(names), lo, hi, np.zeros(X.shape[1]))
    S = apply_scaler(X, params, impute=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(S, axis=0)
    params.median = np.where(np.isfinite(med), med, 0.0)
    return params


def apply_scaler(X, params: ScalerParams, impute: bool = True) -> np.ndarray:
    """``(v - min) / (max - min)``; constant columns map to 0; no clamping."""
    X = np.asarray(X, dtype=float)
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    S = np.where(span > 0, (X - params.minimum) / safe, 0.0)
    S[np.isnan(X)] = np.nan
    if impute:
        S = np.where(np.isnan(S), params.median, S)
    return S


# ---------------------------------------------------------------- screening

def _pearson(a, b):
    ok = np.isfinite(a) & np.isfinite(b)
    n = int(ok.sum())
    if n < 3:
        return 0.0, n, True
    a, b = a[ok] - a[ok].mean(), b[ok] - b[ok].mean()
    sa, sb = np.sqrt(a @ a), np.sqrt(b @ b)
    if sa == 0 or sb == 0:
        return 0.0, n, True
    return float(np.clip((a @ b) / (sa * sb), -1.0, 1.0)), n, False


def pearson_rank(df: pd.DataFrame, target: str, features=None) -> pd.DataFrame:
    """Pearson r of every feature with ``target`` sorted by |r| (stable)."""
    features = [c for c in (features or FEATURE_NAMES) if c in df.columns]
    if len(df) < 3:
        raise ValueError("need at least 3 rows to rank features")
    y = df[target].to_numpy(float)
    rows = []
    for f in features:
        r, n, deg = _pearson(df[f].to_numpy(float), y)
        rows.append((f, r, n, deg))
    out = pd.DataFrame(rows, columns=["feature", "r", "n", "degenerate"])
    order = np.argsort(-np.abs(out["r"].to_numpy()), kind="stable")
    return out.iloc[order].reset_index(drop=True)


def collinearity_screen(df: pd.DataFrame, ranking: pd.DataFrame, r_max: float = 0.95) -> list:
    """Greedy keep-list in ranking order; drop a feature whose |r| with any
    already-kept feature exceeds ``r_max``."""
    kept = []
    for f in ranking["feature"]:
        x = df[f].to_numpy(float)
        if all(abs(_pearson(x, df[g].to_numpy(float))[0]) <= r_max for g in kept):
            kept.append(f)
    return kept
