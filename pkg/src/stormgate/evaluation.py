"""Scoring: classification and regression metrics, peak-conditional MASE,
peak-event detection and matching, moving-block bootstrap, external incident
reconciliation, and spatial/temporal autocorrelation diagnostics.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import rankdata

PEAK_THRESHOLD = 50_000.0
DELTAS = (0, 6, 12, 24, 36, 48)
OMEGAS = (6, 12, 24, 36, 48)


def _ratio(num, den):
    return None if den == 0 else num / den


# ----------------------------------------------------------- classification

def confusion(labels, predicted) -> dict:
    y = np.asarray(labels).astype(bool)
    p = np.asarray(predicted).astype(bool)
    return {"tp": int(np.sum(y & p)), "fp": int(np.sum(~y & p)),
            "fn": int(np.sum(y & ~p)), "tn": int(np.sum(~y & ~p))}


def classification_metrics(tp: int, fp: int, fn: int, tn: int) -> dict:
    """Precision, recall, F1 and prevalence as fractions.

    Undefined ratios are ``None``; F1 is ``2TP / (2TP + FP + FN)`` so a
    classifier with no true positives scores 0.
    """
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("confusion counts must be non-negative")
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("empty confusion matrix")
    return {
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "prevalence": (tp + fn) / total,
    }


def _check_binary(labels):
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise ValueError("need at least one positive and one negative label")
    return y


def average_precision(scores, labels) -> float:
    """Step-wise AP: sum over thresholds of (recall increment) x precision."""
    y = _check_binary(labels)
    prec, rec, _ = _pr_points(np.asarray(scores, dtype=float), y)
    return float(np.sum(np.diff(np.r_[0.0, rec]) * prec))


def _pr_points(s, y):
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # end of each tied score run
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    return tps / (tps + fps), tps / y.sum(), s[last]


@dataclass
class PRResult:
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    aucpr: float
    roc_auc: float
    average_precision: float
    prevalence: float


def pr_curve_auc(scores, labels) -> PRResult:
    """Precision-recall points, trapezoidal AUCPR and Mann-Whitney ROC-AUC."""
    y = _check_binary(labels)
    s = np.asarray(scores, dtype=float)
    prec, rec, thr = _pr_points(s, y)
    # anchor at recall 0 with the first precision so the curve spans [0, 1]
    r = np.r_[0.0, rec]
    p = np.r_[prec[0], prec]
    aucpr = float(trapezoid(p, r))
    ranks = rankdata(s)
    n1, n0 = y.sum(), (~y).sum()
    roc = (ranks[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)
    ap = float(np.sum(np.diff(r) * prec))
    return PRResult(prec, rec, thr, aucpr, float(roc), ap, float(y.mean()))


# --------------------------------------------------------------- regression

def seasonal_naive_mae(y, h: int = 24) -> float:
    y = np.asarray(y, dtype=float)
    if len(y) < h + 2:
        raise ValueError(f"need at least {h + 2} points for a lag-{h} naive scale")
    return float(np.mean(np.abs(y[h:] - y[:-h])))


def overall_metrics(y, yhat, h: int = 24) -> dict:
    """RMSE, MAE, R^2 and MASE on the original scale (R^2 None for constant y)."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("series must be aligned")
    err = y - yhat
    sst = float(np.sum((y - y.mean()) ** 2))
    denom = seasonal_naive_mae(y, h)
    mae = float(np.mean(np.abs(err)))
    return {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mae": mae,
        "r2": None if sst == 0 else 1.0 - float(np.sum(err ** 2)) / sst,
        "mase": None if denom == 0 else mae / denom,
    }


def distance_to_peaks(y, threshold: float) -> np.ndarray:
    """Hours from each index to the nearest index with ``y >= threshold`` (inf if none)."""
    y = np.asarray(y, dtype=float)
    peaks = np.flatnonzero(y >= threshold)
    t = np.arange(len(y))
    if len(peaks) == 0:
        return np.full(len(y), np.inf)
    j = np.searchsorted(peaks, t)
    left = np.where(j > 0, t - peaks[np.maximum(j - 1, 0)], np.inf)
    right = np.where(j < len(peaks), peaks[np.minimum(j, len(peaks) - 1)] - t, np.inf)
    return np.minimum(left, right)


@dataclass
class CmaseEntry:
    delta: int
    n_hours: int
    value: float | None
    reason: str = ""


def cmase(y, yhat, threshold: float = PEAK_THRESHOLD, delta: int = 0, h: int = 24,
          mask=None, denominator: float | None = None) -> CmaseEntry:
    """Mean absolute error over hours within ``delta`` of a peak hour, scaled
    by the full-series lag-``h`` seasonal-naive MAE.

    ``mask`` (optional, boolean) restricts the hour set further.
    ``denominator`` overrides the scale, e.g. to reuse the original one on
    resampled series.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    S = distance_to_peaks(y, threshold) <= delta
    if mask is not None:
        S &= np.asarray(mask, dtype=bool)
    n = int(S.sum())
    if n == 0:
        return CmaseEntry(delta, 0, None, "no hours within delta of a peak")
    den = seasonal_naive_mae(y, h) if denominator is None else denominator
    if den <= 0:
        return CmaseEntry(delta, n, None, "seasonal-naive scale is zero")
    return CmaseEntry(delta, n, float(np.mean(np.abs(y[S] - yhat[S]))) / den)


def cmase_table(y, yhat, threshold: float = PEAK_THRESHOLD, deltas=DELTAS, h: int = 24,
                mask=None, denominator: float | None = None) -> list:
    den = seasonal_naive_mae(y, h) if denominator is None else denominator
    return [cmase(y, yhat, threshold, d, h, mask, den) for d in deltas]


# ------------------------------------------------------------------- events

@dataclass
class EventList:
    times: np.ndarray
    magnitudes: np.ndarray
    threshold: float = PEAK_THRESHOLD
    ma_k: int = 5
    merge_gap: int = 24

    def __len__(self):
        return len(self.times)


def centered_moving_average(y, k: int = 5) -> np.ndarray:
    """Centered mean of width ``k``; edge windows are truncated and NaN
    entries are skipped (all-NaN window gives NaN)."""
    y = np.asarray(y, dtype=float)
    T = len(y)
    half = k // 2
    ok = np.isfinite(y)
    z = np.where(ok, y, 0.0)
    acc = np.zeros(T)
    cnt = np.zeros(T)
    for s in range(-half, k - half):
        lo, hi = max(0, -s), min(T, T - s)
        acc[lo:hi] = acc[lo:hi] + z[lo + s:hi + s]
        cnt[lo:hi] = cnt[lo:hi] + ok[lo + s:hi + s]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, acc / np.maximum(cnt, 1), np.nan)


def detect_events(y, threshold: float = PEAK_THRESHOLD, ma_k: int = 5,
                  merge_gap: int = 24) -> EventList:
    """Peak events: smoothed-series exceedance segments, merged across short
    gaps, each reported at the raw-series argmax inside it (earliest tie)."""
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        return EventList(np.zeros(0, int), np.zeros(0), threshold, ma_k, merge_gap)
    sm = centered_moving_average(y, ma_k)
    above = np.r_[False, sm >= threshold, False]
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts, ends = edges[0::2], edges[1::2] - 1
    segs = []
    for a, b in zip(starts, ends):
        if segs and a - segs[-1][1] - 1 <= merge_gap:
            segs[-1][1] = b
        else:
            segs.append([a, b])
    times, mags = [], []
    for a, b in segs:
        raw = y[a:b + 1]
        if not np.isfinite(raw).any():
            continue
        i = a + int(np.argmax(np.where(np.isfinite(raw), raw, -np.inf)))
        times.append(i)
        mags.append(y[i])
    return EventList(np.asarray(times, dtype=int), np.asarray(mags, dtype=float),
                     threshold, ma_k, merge_gap)


@dataclass
class MatchResult:
    pairs: list
    misses: list
    false_alarms: list
    omega: float
    n_pred: int
    n_ref: int

    @property
    def hits(self) -> int:
        return len(self.pairs)


def match_events(pred_times, ref_times, omega: float) -> MatchResult:
    """Greedy one-to-one matching by |dt| (ties: earlier ref, then earlier pred)."""
    if omega < 0:
        raise ValueError("matching window must be non-negative")
    pred = [int(t) for t in np.asarray(getattr(pred_times, "times", pred_times))]
    ref = [int(t) for t in np.asarray(getattr(ref_times, "times", ref_times))]
    cand = sorted((abs(p - r), r, p, i, j)
                  for i, p in enumerate(pred) for j, r in enumerate(ref) if abs(p - r) <= omega)
    used_p, used_r, pairs = set(), set(), []
    for _, r, p, i, j in cand:
        if i in used_p or j in used_r:
            continue
        used_p.add(i)
        used_r.add(j)
        pairs.append((p, r))
    misses = [r for j, r in enumerate(ref) if j not in used_r]
    fas = [p for i, p in enumerate(pred) if i not in used_p]
    return MatchResult(sorted(pairs, key=lambda t: t[1]), misses, fas, omega, len(pred), len(ref))


def prf_from_counts(hits: int, misses: int, false_alarms: int):
    """Event precision, recall and F1 as fractions (``None`` when undefined)."""
    p = _ratio(hits, hits + false_alarms)
    r = _ratio(hits, hits + misses)
    f1 = None if p is None or r is None or p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


def event_prf(match: MatchResult):
    return prf_from_counts(match.hits, len(match.misses), len(match.false_alarms))


def event_table(pred_series, ref_series, omegas=OMEGAS, threshold: float = PEAK_THRESHOLD,
                ma_k: int = 5, merge_gap: int = 24, pred_mask=None) -> list:
    """One row per window: counts and P/R/F1 for a prediction vs truth series.

    ``pred_mask`` hides unavailable prediction hours from the detector.
    """
    ps = np.asarray(pred_series, dtype=float)
    if pred_mask is not None:
        ps = np.where(np.asarray(pred_mask, dtype=bool), ps, np.nan)
    ev_p = detect_events(ps, threshold, ma_k, merge_gap)
    ev_r = detect_events(ref_series, threshold, ma_k, merge_gap)
    rows = []
    for w in omegas:
        m = match_events(ev_p, ev_r, w)
        p, r, f1 = event_prf(m)
        rows.append({"omega": w, "n_ref": m.n_ref, "n_pred": m.n_pred, "hits": m.hits,
                     "miss": len(m.misses), "fa": len(m.false_alarms), "p": p, "r": r, "f1": f1})
    return rows


# ---------------------------------------------------------------- bootstrap

@dataclass
class BootstrapSummary:
    B: int
    block: int
    seed: int
    stats: dict = field(default_factory=dict)  # name -> {median, lo, hi, n}

    def as_dict(self) -> dict:
        return asdict(self)


def block_offsets(T: int, block: int, rng) -> np.ndarray:
    n_blocks = math.ceil(T / block)
    return rng.integers(0, T - block + 1, size=n_blocks)


def resample_index(T: int, block: int, rng) -> np.ndarray:
    starts = block_offsets(T, block, rng)
    return (starts[:, None] + np.arange(block)[None, :]).ravel()[:T]


def block_bootstrap(y, yhat, B: int = 500, block: int = 168, seed: int = 0,
                    omegas=OMEGAS, deltas=DELTAS, threshold: float = PEAK_THRESHOLD,
                    h: int = 24, mask=None, pred_events: str = "resampled",
                    ma_k: int = 5, merge_gap: int = 24) -> BootstrapSummary:
    """Moving-block bootstrap of event and peak-error statistics.

    Every replicate draws ``ceil(T/block)`` block starts uniformly from
    ``[0, T - block]`` with its own generator ``default_rng([seed, b])`` and
    applies the same index to truth, prediction and ``mask``. The cMASE scale
    stays at its full-series value. With ``pred_events="original"`` the
    prediction events are detected once on the unresampled prediction.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if pred_events not in ("resampled", "original"):
        raise ValueError("pred_events must be 'resampled' or 'original'")
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    T = len(y)
    if T < block:
        raise ValueError("series shorter than one block")
    msk = None if mask is None else np.asarray(mask, dtype=bool)
    den = seasonal_naive_mae(y, h)

    def masked(p, m):
        return p if m is None else np.where(m, p, np.nan)

    fixed_pred = detect_events(masked(yhat, msk), threshold, ma_k, merge_gap)
    draws = {}
    for b in range(B):
        idx = resample_index(T, block, np.random.default_rng([seed, b]))
        yb, pb = y[idx], yhat[idx]
        mb = None if msk is None else msk[idx]
        ev_r = detect_events(yb, threshold, ma_k, merge_gap)
        ev_p = fixed_pred if pred_events == "original" else detect_events(masked(pb, mb), threshold, ma_k, merge_gap)
        for w in omegas:
            m = match_events(ev_p, ev_r, w)
            p, r, f1 = event_prf(m)
            for name, v in (("hits", m.hits), ("precision", p), ("recall", r), ("f1", f1)):
                draws.setdefault(f"{name}@{w}", []).append(np.nan if v is None else float(v))
        for e in cmase_table(yb, pb, threshold, deltas, h, mb, den):
            draws.setdefault(f"cmase@{e.delta}", []).append(np.nan if e.value is None else e.value)
    out = BootstrapSummary(B, block, seed)
    for name, vals in draws.items():
        v = np.asarray(vals)
        v = v[np.isfinite(v)]
        if len(v) == 0:
            out.stats[name] = {"median": None, "lo": None, "hi": None, "n": 0}
        else:
            lo, med, hi = np.percentile(v, [2.5, 50, 97.5])
            out.stats[name] = {"median": float(med), "lo": float(lo), "hi": float(hi), "n": int(len(v))}
    return out


# ------------------------------------------------------ external incidents

@dataclass
class Oe417Row:
    begin: pd.Timestamp
    end: pd.Timestamp
    complete: bool
    n_reports: int
    external: float | None
    internal_max: float | None
    peak_time: pd.Timestamp | None
    offset_h: float | None
    delta_pct: float | None
    confidence: str
    note: str = ""

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("begin", "end", "peak_time"):
            d[k] = None if d[k] is None else pd.Timestamp(d[k]).isoformat()
        return d


def read_external_events(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def _parse_time(s):
    s = str(s).strip()
    if s == "" or s.lower() in ("unknown", "nan", "none"):
        return None
    t = pd.Timestamp(s)
    return t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")


def _parse_customers(s):
    s = str(s).strip().replace(",", "")
    if s == "" or s.lower() in ("unknown", "nan", "none"):
        return None
    return float(s)


def oe417_reconcile(internal: pd.Series, external: pd.DataFrame, pad_hours: float = 12.0,
                    open_end_hours: float = 24.0) -> list:
    """Compare external incident reports with the internal state-level series.

    ``internal`` is an hourly series indexed by UTC timestamps. ``external``
    has ``begin_utc, end_utc, customers`` (blank/"Unknown" allowed).
    Reports whose windows overlap are grouped and their customer counts
    summed (any unknown count leaves the group without a magnitude). The
    internal maximum is searched within ``pad_hours`` of the window; an
    unknown end is taken as ``begin + open_end_hours`` and marks the window
    incomplete.
    """
    idx = pd.DatetimeIndex(internal.index)
    idx = idx.tz_localize("UTC") if idx.tz is None else idx.tz_convert("UTC")
    vals = internal.to_numpy(dtype=float)
    rows, bad = [], []
    for rec in external.to_dict("records"):
        try:
            b = _parse_time(rec.get("begin_utc", ""))
            if b is None:
                raise ValueError("missing begin")
            e = _parse_time(rec.get("end_utc", ""))
            cust = _parse_customers(rec.get("customers", ""))
        except (ValueError, TypeError) as exc:
            bad.append(Oe417Row(pd.NaT, pd.NaT, False, 1, None, None, None, None, None, "Low",
                                f"unparseable window: {exc}"))
            continue
        complete = e is not None
        e = e if complete else b + pd.Timedelta(hours=open_end_hours)
        rows.append((b, e, complete, cust))
    rows.sort(key=lambda r: r[0])
    groups = []
    for r in rows:
        if groups and r[0] <= groups[-1]["end"]:
            g = groups[-1]
            g["end"] = max(g["end"], r[1])
            g["complete"] &= r[2]
            g["members"].append(r[3])
        else:
            groups.append({"begin": r[0], "end": r[1], "complete": r[2], "members": [r[3]]})

    out = []
    pad = pd.Timedelta(hours=pad_hours)
    for g in groups:
        b, e = g["begin"], g["end"]
        n = len(g["members"])
        ext = None if any(m is None for m in g["members"]) else float(sum(g["members"]))
        sel = (idx >= b - pad) & (idx <= e + pad) & np.isfinite(vals)
        imax = ptime = off = None
        if sel.any():
            k = np.flatnonzero(sel)[int(np.argmax(vals[sel]))]
            imax, ptime = float(vals[k]), idx[k]
            gap = max((b - ptime).total_seconds(), (ptime - e).total_seconds(), 0.0)
            off = gap / 3600.0
        delta = None
        if ext is not None and ext > 0 and imax is not None:
            delta = (imax - ext) / ext * 100.0
        notes = []
        if ext is None or ext == 0:
            notes.append("external magnitude missing or zero (loss of monitoring)")
        if n > 1:
            notes.append(f"{n} overlapping reports summed")
        if not g["complete"]:
            notes.append("window end unknown")
        if imax is None:
            notes.append("no internal data in window")
        if delta is None or n > 1:
            conf = "Low"
        elif off <= 6 and abs(delta) <= 15 and g["complete"]:
            conf = "High"
        elif (off <= 12 and abs(delta) <= 40) or not g["complete"]:
            conf = "Medium"
        else:
            conf = "Low"
        out.append(Oe417Row(b, e, g["complete"], n, ext, imax, ptime, off, delta, conf, "; ".join(notes)))
    return out + bad


# ------------------------------------------------------------- diagnostics

def lattice_adjacency(nrows: int, ncols: int, kind: str = "rook") -> np.ndarray:
    """Binary contiguity matrix of a row-major lattice."""
    n = nrows * ncols
    W = np.zeros((n, n))
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if kind == "queen":
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for r in range(nrows):
        for c in range(ncols):
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < nrows and 0 <= cc < ncols:
                    W[r * ncols + c, rr * ncols + cc] = 1.0
    return W


def adjacency_matrix(ids, pairs) -> np.ndarray:
    """Symmetric 0/1 matrix from (a, b) neighbor pairs over ``ids``."""
    pos = {str(c): i for i, c in enumerate(ids)}
    W = np.zeros((len(pos), len(pos)))
    for a, b in pairs:
        i, j = pos[str(a)], pos[str(b)]
        if i != j:
            W[i, j] = W[j, i] = 1.0
    return W


@dataclass
class MoranResult:
    I: float
    expected: float
    z_sim: float
    p_sim: float
    permutations: int


def _moran_stat(Z, W, rs):
    # Z: (..., n) centered values; row standardization applied after the
    # weighted sum keeps integer contiguity sums exact
    n = Z.shape[-1]
    live = rs > 0
    lag = np.divide(Z @ W.T, rs, out=np.zeros(Z.shape), where=live)
    return (n / np.count_nonzero(live)) * np.sum(Z * lag, axis=-1) / np.sum(Z * Z, axis=-1)


def morans_i(values, W, permutations: int = 999, seed: int = 0) -> MoranResult:
    """Global Moran's I with row-standardized weights and a one-sided
    conditional permutation p-value."""
    x = np.asarray(values, dtype=float)
    W = np.asarray(W, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two areal units")
    z = x - x.mean()
    if not np.any(z != 0):
        raise ValueError("constant values have no spatial autocorrelation")
    rs = W.sum(axis=1)
    if not np.any(rs > 0):
        raise ValueError("weight matrix has no neighbors")
    I = float(_moran_stat(z, W, rs))
    n = len(x)
    if permutations < 1:
        return MoranResult(I, -1.0 / (n - 1), float("nan"), float("nan"), 0)
    rng = np.random.default_rng(seed)
    Z = np.stack([rng.permutation(z) for _ in range(permutations)])
    sims = _moran_stat(Z, W, rs)
    larger = int(np.sum(sims >= I))
    if permutations - larger < larger:
        larger = permutations - larger
    p = (larger + 1.0) / (permutations + 1.0)
    sd = sims.std(ddof=1)
    zs = float((I - sims.mean()) / sd) if sd > 0 else float("nan")
    return MoranResult(I, -1.0 / (n - 1), zs, p, permutations)


def acf(y, lags=(1, 6, 12, 18, 24, 36, 48)) -> dict:
    """Sample autocorrelation about the full-series mean."""
    y = np.asarray(y, dtype=float)
    lags = list(lags)
    if len(y) < max(lags, default=0) + 2:
        raise ValueError("series too short for the requested lags")
    d = y - y.mean()
    den = float(d @ d)
    if den == 0:
        raise ValueError("constant series")
    return {L: float(d[:len(d) - L] @ d[L:]) / den if L else 1.0 for L in lags}
