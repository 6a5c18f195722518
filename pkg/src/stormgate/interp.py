"""Station-to-centroid interpolation of hourly weather.

Continuous parameters are kriged (ordinary or universal with a linear drift)
from an hourly spherical variogram restricted to stations within ``maxlag``;
dew point and wind speed extremes are then overdrafted from nearby stations.
Discrete or narrow-footprint parameters are joined by radius instead.

All coordinates are projected meters.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import warnings

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, solve
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist, squareform



class NotEnoughStations(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


class VariogramFitError(ValueError):
    pass


# ------------------------------------------------------------------ models

@dataclass
class EmpiricalVariogram:
    lags: np.ndarray
    semivariances: np.ndarray
    counts: np.ndarray
    maxlag: float

    def __len__(self):
        return len(self.lags)


@dataclass
class SphericalModel:
    """Spherical variogram with nugget ``nugget``, partial sill ``psill`` and range ``range_``."""

    nugget: float
    psill: float
    range_: float
    fallback: bool = False

    @property
    def sill(self) -> float:
        return self.nugget + self.psill

    def __call__(self, h):
        return spherical(h, self.nugget, self.psill, self.range_)

    def covariance(self, h):
        h = np.asarray(h, dtype=float)
        return np.where(h == 0, self.sill, self.sill - spherical(h, self.nugget, self.psill, self.range_))


def spherical(h, nugget, psill, range_):
    """gamma(h) = c0 + c(1.5 h/a - 0.5 (h/a)^3) below the range, c0 + c beyond; gamma(0) = 0."""
    h = np.asarray(h, dtype=float)
    r = np.minimum(h / range_, 1.0)
    g = nugget + psill * (1.5 * r - 0.5 * r**3)
    return np.where(h == 0, 0.0, g)


@dataclass
class KrigingConfig:
    method: str = "ordinary"
    maxlag: float = 250_000.0
    n_lags: int | None = None
    bin_rule: str = "fixed"
    drift: str | None = None

    def __post_init__(self):
        if self.method not in ("ordinary", "universal"):
            raise ValueError(f"unknown kriging method {self.method!r}")
        if self.bin_rule not in ("fixed", "sturges", "fd"):
            raise ValueError(f"unknown bin rule {self.bin_rule!r}")
        if self.drift is None:
            self.drift = "regional_linear" if self.method == "universal" else "none"
        if self.method == "universal" and self.drift != "regional_linear":
            raise ValueError("universal kriging requires drift='regional_linear'")
        if self.method == "ordinary" and self.drift != "none":
            raise ValueError("ordinary kriging takes no drift terms")
        if self.maxlag <= 0:
            raise ValueError("maxlag must be positive")


@dataclass
class KrigedField:
    parameter: str
    hour: object
    values: np.ndarray
    variance: np.ndarray
    n_neighbors: np.ndarray
    jittered: np.ndarray
    clamped: np.ndarray = None
    overdrafted: np.ndarray = None
    weights: list | None = None

    def __post_init__(self):
        m = len(self.values)
        if self.clamped is None:
            self.clamped = np.zeros(m, dtype=bool)
        if self.overdrafted is None:
            self.overdrafted = np.zeros(m, dtype=bool)


@dataclass
class OverdraftRule:
    radius: float
    upper: float | None = None
    lower: float | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("overdraft radius must be positive")
        if self.upper is not None and self.lower is not None and not self.lower < self.upper:
            raise ValueError("overdraft lower threshold must be below the upper one")


# -------------------------------------------------------------- variogram

def _bin_count(d: np.ndarray, cfg: KrigingConfig) -> int:
    n = len(d)
    if cfg.bin_rule == "fixed":
        return int(cfg.n_lags or 10)
    if cfg.bin_rule == "sturges":
        return int(math.ceil(math.log2(n))) + 1 if n > 1 else 1
    q75, q25 = np.percentile(d, [75, 25])
    width = 2.0 * (q75 - q25) * n ** (-1.0 / 3.0)
    if width <= 0:
        return int(math.ceil(math.log2(n))) + 1 if n > 1 else 1
    return int(min(max(math.ceil(cfg.maxlag / width), 1), 100))


def fit_empirical_variogram(coords, values, cfg: KrigingConfig) -> EmpiricalVariogram:
    """Bin half squared differences of station pairs closer than ``cfg.maxlag``."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    coords, values = coords[ok], values[ok]
    if len(values) < 2:
        raise NotEnoughStations("variogram needs at least two stations with values")
    d = pdist(coords)
    sv = 0.5 * pdist(values[:, None], "sqeuclidean")
    keep = d <= cfg.maxlag
    d, sv = d[keep], sv[keep]
    if len(d) == 0:
        raise NotEnoughStations("no station pairs within maxlag")
    nb = _bin_count(d, cfg)
    edges = np.linspace(0.0, cfg.maxlag, nb + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb)
    lag_sum = np.bincount(idx, weights=d, minlength=nb)
    sv_sum = np.bincount(idx, weights=sv, minlength=nb)
    used = counts > 0
    counts = counts[used]
    return EmpiricalVariogram(
        lags=lag_sum[used] / counts,
        semivariances=sv_sum[used] / counts,
        counts=counts,
        maxlag=cfg.maxlag,
    )


def _nnls_two(f, g, w):
    """Weighted least squares of g on [1, f] with both coefficients >= 0."""
    sw = w.sum()
    swf = (w * f).sum()
    swff = (w * f * f).sum()
    swg = (w * g).sum()
    swfg = (w * f * g).sum()
    cands = []
    det = sw * swff - swf * swf
    if det > 1e-300 * max(sw * swff, 1.0):
        c0 = (swff * swg - swf * swfg) / det
        c = (sw * swfg - swf * swg) / det
        if c0 >= 0 and c >= 0:
            cands.append((c0, c))
    if swff > 0:
        cands.append((0.0, max(swfg / swff, 0.0)))
    cands.append((max(swg / sw, 0.0), 0.0))
    best = None
    for c0, c in cands:
        sse = float((w * (c0 + c * f - g) ** 2).sum())
        if best is None or sse < best[0]:
            best = (sse, c0, c)
    return best


def _profile_sse(ranges, h, g, w):
    """Best non-negative (nugget, psill) SSE for each candidate range, vectorized."""
    r = np.minimum(h[None, :] / ranges[:, None], 1.0)
    f = 1.5 * r - 0.5 * r**3
    sw = w.sum()
    swg = (w * g).sum()
    swf = f @ w
    swff = (f * f) @ w
    swfg = f @ (w * g)
    det = sw * swff - swf * swf
    with np.errstate(divide="ignore", invalid="ignore"):
        c0 = (swff * swg - swf * swfg) / det
        c = (sw * swfg - swf * swg) / det
        c_only = np.where(swff > 0, np.maximum(swfg / swff, 0.0), 0.0)
    free_ok = (det > 0) & (c0 >= 0) & (c >= 0)
    c0 = np.where(free_ok, c0, 0.0)
    c = np.where(free_ok, c, 0.0)

    def sse(a0, a1):
        resid = a0[:, None] + a1[:, None] * f - g[None, :]
        return (resid**2) @ w

    s_free = np.where(free_ok, sse(c0, c), np.inf)
    s_conly = sse(np.zeros_like(c_only), c_only)
    s_nug = sse(np.full(len(ranges), max(swg / sw, 0.0)), np.zeros(len(ranges)))
    return np.minimum(np.minimum(s_free, s_conly), s_nug)


def fit_spherical_model(ev: EmpiricalVariogram, maxlag: float | None = None) -> SphericalModel:
    """Pair-count weighted least-squares spherical fit.

    For a fixed range the model is linear in (nugget, partial sill), so the
    fit profiles those out with a two-term non-negative solve and searches
    the range on ``[min lag, 2 * maxlag]``.
    """
    if len(ev) < 3:
        raise VariogramFitError("spherical fit needs at least three lag bins")
    maxlag = ev.maxlag if maxlag is None else maxlag
    h = np.asarray(ev.lags, dtype=float)
    g = np.asarray(ev.semivariances, dtype=float)
    w = np.asarray(ev.counts, dtype=float)
    a_lo = max(float(h.min()), 1e-9)
    a_hi = max(2.0 * maxlag, a_lo * (1 + 1e-9))

    def profile(a):
        r = np.minimum(h / a, 1.0)
        return _nnls_two(1.5 * r - 0.5 * r**3, g, w)

    # coarse-to-fine search over log(range); each round brackets the best node
    lo, hi = math.log(a_lo), math.log(a_hi)
    a_best = a_lo
    for _ in range(7):
        grid = np.exp(np.linspace(lo, hi, 33))
        sse = _profile_sse(grid, h, g, w)
        k = int(np.argmin(sse))
        a_best = grid[k]
        step = (hi - lo) / 32
        lo, hi = max(math.log(a_best) - step, math.log(a_lo)), min(math.log(a_best) + step, math.log(a_hi))
    _, c0, c = profile(a_best)
    if not np.isfinite([c0, c, a_best]).all():
        raise VariogramFitError("non-finite spherical fit")
    return SphericalModel(float(c0), float(c), float(a_best))


def default_model(values, maxlag: float) -> SphericalModel:
    """Fallback when no hourly fit is available: pure sill at the sample variance."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    var = float(np.var(v, ddof=1)) if len(v) > 1 else 0.0
    return SphericalModel(0.0, var, maxlag / 2.0, fallback=True)


# ---------------------------------------------------------------- kriging

def _drift_basis(xy, origin, scale):
    z = (np.asarray(xy, dtype=float) - origin) / scale
    return np.column_stack([np.ones(len(z)), z[:, 0], z[:, 1]])


def _solve(A, rhs, n, sill):
    """Solve the kriging system, regularizing the covariance block if needed."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        try:
            return solve(A, rhs, assume_a="sym", check_finite=False), False
        except (LinAlgError, LinAlgWarning):
            pass
    A = A.copy()
    A[np.arange(n), np.arange(n)] += 1e-10 * sill
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        try:
            if sill > 0:
                return solve(A, rhs, assume_a="sym", check_finite=False), True
        except (LinAlgError, LinAlgWarning):
            pass
    return np.linalg.lstsq(A, rhs, rcond=None)[0], True


def krige(coords, values, targets, model: SphericalModel, cfg: KrigingConfig,
          parameter: str = "", hour=None, floor=None, ceiling=None,
          return_weights: bool = False) -> KrigedField:
    """Krige station values to target points.

    Each target uses the stations within ``cfg.maxlag``. Ordinary kriging
    constrains the weights to sum to one; universal kriging adds the drift
    basis {1, x, y} and drops back to ordinary for a target when fewer than
    four in-radius stations (or collinear ones) leave the drift unidentified.
    Targets without in-radius stations get NaN.
    """
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if not np.isfinite(targets).all():
        raise ValueError("kriging targets must be finite")
    ok = np.isfinite(values)
    coords, values = coords[ok], values[ok]
    st_index = np.flatnonzero(ok)
    m = len(targets)
    out = np.full(m, np.nan)
    var = np.full(m, np.nan)
    nnb = np.zeros(m, dtype=int)
    jit = np.zeros(m, dtype=bool)
    weights = [None] * m if return_weights else None
    if len(values) == 0:
        return KrigedField(parameter, hour, out, var, nnb, jit, weights=weights)
    if len(values) > 1 and np.all(coords == coords[0]):
        raise DegenerateGeometry("all stations share identical coordinates")

    d_ts = cdist(targets, coords)
    inr = d_ts <= cfg.maxlag
    C_ss = model.covariance(squareform(pdist(coords)))
    C_ts = model.covariance(d_ts)
    sill = model.sill
    k_all = inr.sum(axis=1)
    nnb[:] = k_all
    p_all = np.ones(m, dtype=int)
    if cfg.method == "universal":
        origin = coords.mean(axis=0)
        F_s = _drift_basis(coords, origin, cfg.maxlag)
        F_t = _drift_basis(targets, origin, cfg.maxlag)
        for t in np.flatnonzero(k_all >= 4):
            xy = F_s[inr[t], 1:]
            xy = xy - xy.mean(axis=0)
            S = xy.T @ xy
            # collinear stations leave the linear drift unidentified
            if np.linalg.det(S) > 1e-12 * max(np.trace(S), 1e-300) ** 2:
                p_all[t] = 3
    else:
        F_s = np.ones((len(values), 1))
        F_t = np.ones((m, 1))

    for (k, p) in sorted(set(zip(k_all.tolist(), p_all.tolist()))):
        if k == 0:
            continue
        tix = np.flatnonzero((k_all == k) & (p_all == p))
        g = len(tix)
        sidx = np.nonzero(inr[tix])[1].reshape(g, k)
        A = np.zeros((g, k + p, k + p))
        A[:, :k, :k] = C_ss[sidx[:, :, None], sidx[:, None, :]]
        F = F_s[sidx][:, :, :p] if p > 1 else np.ones((g, k, 1))
        A[:, :k, k:] = F
        A[:, k:, :k] = np.transpose(F, (0, 2, 1))
        rhs = np.zeros((g, k + p))
        rhs[:, :k] = C_ts[tix[:, None], sidx]
        rhs[:, k:] = F_t[tix][:, :p] if p > 1 else 1.0
        try:
            sol = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
            bad = ~np.isfinite(sol).all(axis=1) | (np.abs(sol[:, :k]).max(axis=1) > 1e6)
        except np.linalg.LinAlgError:
            sol = np.zeros((g, k + p))
            bad = np.ones(g, dtype=bool)
        for i in np.flatnonzero(bad):
            sol[i], jit[tix[i]] = _solve(A[i], rhs[i], k, sill)
        lam = sol[:, :k]
        out[tix] = np.einsum("gk,gk->g", lam, values[sidx])
        v = sill - np.einsum("gk,gk->g", lam, rhs[:, :k]) - np.einsum("gp,gp->g", sol[:, k:], rhs[:, k:])
        var[tix] = np.maximum(v, 0.0)
        if return_weights:
            for i, t in enumerate(tix):
                weights[t] = (st_index[sidx[i]], lam[i].copy())

    clamped = np.zeros(m, dtype=bool)
    if floor is not None:
        low = out < floor
        out[low] = floor
        clamped |= low
    if ceiling is not None:
        high = out > ceiling
        out[high] = ceiling
        clamped |= high
    return KrigedField(parameter, hour, out, var, nnb, jit, clamped=clamped, weights=weights)


def overdraft(field: KrigedField, coords, values, targets, rule: OverdraftRule) -> KrigedField:
    """Replace kriged centroid values by the nearest in-radius extreme station value."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    extreme = np.zeros(len(values), dtype=bool)
    fin = np.isfinite(values)
    if rule.upper is not None:
        extreme |= fin & (values >= rule.upper)
    if rule.lower is not None:
        extreme |= fin & (values <= rule.lower)
    new_vals = field.values.copy()
    flagged = field.overdrafted.copy()
    if extreme.any():
        ex = np.flatnonzero(extreme)
        d = cdist(targets, coords[ex])
        near = np.argmin(d, axis=1)
        hit = d[np.arange(len(targets)), near] <= rule.radius
        new_vals[hit] = values[ex[near[hit]]]
        flagged |= hit
    return replace(field, values=new_vals, overdrafted=flagged)


def rh_gradient(coords, rh, radius: float = 100_000.0) -> np.ndarray:
    """|RH_i - RH_j| / d_ij in %/km against each station's nearest neighbor.

    Stations with no other station within ``radius`` (or missing RH) get 0.
    """
    coords = np.asarray(coords, dtype=float)
    rh = np.asarray(rh, dtype=float)
    out = np.zeros(len(rh))
    ok = np.flatnonzero(np.isfinite(rh))
    if len(ok) < 2:
        return out
    tree = cKDTree(coords[ok])
    k = min(len(ok), 8)
    dist, nb = tree.query(coords[ok], k=k, distance_upper_bound=radius)
    for row, i in enumerate(ok):
        for d, j in zip(dist[row], nb[row]):
            if not np.isfinite(d):
                break
            if j == row or d == 0:
                continue
            out[i] = abs(rh[i] - rh[ok[j]]) / (d / 1000.0)
            break
    return out


def polygon_join(coords, values, targets, radius: float, how: str = "max", empty=np.nan) -> np.ndarray:
    """Max (numeric) or OR (``how="any"``) over stations within ``radius`` of each target."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    inr = (cdist(targets, coords) <= radius) & np.isfinite(values)[None, :]
    if how == "any":
        return (inr & (values[None, :] > 0)).any(axis=1).astype(float)
    masked = np.where(inr, values[None, :], -np.inf)
    out = masked.max(axis=1)
    out[~inr.any(axis=1)] = empty
    return out


# -------------------------------------------------------------- parameters

@dataclass
class ParamSpec:
    """Interpolation settings for one weather parameter (one config section)."""

    name: str
    method: str = "ordinary"
    maxlag_km: float = 250.0
    n_lags: int | None = None
    bin_rule: str = "fixed"
    drift: str | None = None
    overdraft_radius_km: float | None = None
    overdraft_upper: float | None = None
    overdraft_lower: float | None = None
    join_radius_km: float = 100.0
    floor: float | None = None
    ceiling: float | None = None

    @property
    def kriging(self) -> KrigingConfig:
        return KrigingConfig(self.method, self.maxlag_km * 1000.0, self.n_lags, self.bin_rule, self.drift)

    @property
    def overdraft_rule(self) -> OverdraftRule | None:
        if self.overdraft_radius_km is None:
            return None
        return OverdraftRule(self.overdraft_radius_km * 1000.0, self.overdraft_upper, self.overdraft_lower)


def default_param_specs() -> dict:
    specs = [
        ParamSpec("tmpf", "universal", 250.0),
        ParamSpec("alti", "universal", 250.0),
        ParamSpec("mslp", "universal", 250.0, bin_rule="sturges"),
        ParamSpec("u", "ordinary", 180.0, n_lags=7),
        ParamSpec("v", "ordinary", 180.0, n_lags=7),
        ParamSpec("relh", "ordinary", 100.0, floor=0.0, ceiling=100.0),
        ParamSpec("dwpf", "universal", 250.0, overdraft_radius_km=200.0,
                  overdraft_upper=69.8, overdraft_lower=49.17),
        ParamSpec("sknt", "ordinary", 100.0, n_lags=15, bin_rule="fd",
                  overdraft_radius_km=100.0, overdraft_upper=18.0, floor=0.0),
        ParamSpec("gust", "join"),
        ParamSpec("p01i", "join"),
        ParamSpec("ts_flag", "join"),
        ParamSpec("sq_flag", "join"),
        ParamSpec("hr_flag", "join"),
        ParamSpec("relh_grad", "gradient"),
    ]
    return {s.name: s for s in specs}


_SPEC_KEYS = ("method", "maxlag_km", "n_lags", "bin_rule", "drift", "overdraft_radius_km",
              "overdraft_upper", "overdraft_lower", "join_radius_km", "floor", "ceiling")


def write_param_config(specs: dict, path) -> None:
    cp = configparser.ConfigParser()
    for name, s in specs.items():
        cp[name] = {k: ("" if getattr(s, k) is None else str(getattr(s, k))) for k in _SPEC_KEYS}
    with open(path, "w") as fh:
        cp.write(fh)


def param_specs_from_sections(cp: configparser.ConfigParser, prefix: str = "") -> dict:
    types = {f.name: f.type for f in fields(ParamSpec)}
    specs = {}
    for sec in cp.sections():
        if not sec.startswith(prefix):
            continue
        name = sec[len(prefix):]
        kw = {}
        for key, raw in cp[sec].items():
            if key not in _SPEC_KEYS:
                raise ValueError(f"[{sec}] unknown key {key!r}")
            raw = raw.strip()
            if raw == "" or raw == "None":
                kw[key] = None
                continue
            t = types[key]
            if "int" in t:
                kw[key] = int(raw)
            elif "float" in t:
                kw[key] = float(raw)
            else:
                kw[key] = raw
        specs[name] = ParamSpec(name, **kw)
    return specs


def read_param_config(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    return param_specs_from_sections(cp)


# ------------------------------------------------------------------ engine

@dataclass
class SeriesResult:
    parameter: str
    values: np.ndarray
    variance: np.ndarray
    overdrafted: np.ndarray
    fallback_hours: int = 0
    jittered_hours: int = 0
    models: list = field(default_factory=list)


def interpolate_series(spec: ParamSpec, station_values, coords, targets) -> SeriesResult:
    """Interpolate an hours x stations array to an hours x targets array.

    Kriged parameters refit the variogram every hour; when an hour cannot be
    fitted the most recent successful model is reused (or a default). Hours
    are processed in order so that fallback only ever looks backwards.
    """
    Z = np.atleast_2d(np.asarray(station_values, dtype=float))
    coords = np.asarray(coords, dtype=float)
    targets = np.asarray(targets, dtype=float)
    H, m = Z.shape[0], len(targets)
    vals = np.full((H, m), np.nan)
    var = np.full((H, m), np.nan)
    od = np.zeros((H, m), dtype=bool)
    res = SeriesResult(spec.name, vals, var, od)

    if spec.method in ("join", "gradient"):
        radius = spec.join_radius_km * 1000.0
        for t in range(H):
            z = Z[t]
            if spec.method == "gradient":
                z = rh_gradient(coords, z)
                vals[t] = polygon_join(coords, z, targets, radius, "max", empty=0.0)
            elif spec.name.endswith("_flag"):
                vals[t] = polygon_join(coords, z, targets, radius, "any")
            elif spec.name == "p01i":
                vals[t] = polygon_join(coords, z, targets, radius, "max", empty=0.0)
            else:
                vals[t] = polygon_join(coords, z, targets, radius, "max", empty=np.nan)
        return res

    cfg = spec.kriging
    rule = spec.overdraft_rule
    last = None
    for t in range(H):
        z = Z[t]
        ok = np.isfinite(z)
        if not ok.any():
            continue
        try:
            model = fit_spherical_model(fit_empirical_variogram(coords[ok], z[ok], cfg), cfg.maxlag)
            last = model
        except (NotEnoughStations, VariogramFitError):
            model = last if last is not None else default_model(z, cfg.maxlag)
            model = replace(model, fallback=True)
            res.fallback_hours += 1
        kf = krige(coords, z, targets, model, cfg, spec.name, t, spec.floor, spec.ceiling)
        if rule is not None:
            kf = overdraft(kf, coords, z, targets, rule)
        vals[t] = kf.values
        var[t] = kf.variance
        od[t] = kf.overdrafted
        res.jittered_hours += int(kf.jittered.any())
        res.models.append(model)
    return res


def holdout_validate(station_index: int, station_values, coords, spec: ParamSpec,
                     day_of_hour=None):
    """Leave-one-station-out RMSE for a kriged parameter.

    ``station_values`` is hours x stations. For every hour the held-out
    station's value is predicted from the others (variogram refitted); RMSE is
    taken per day (``day_of_hour`` labels, default ``hour // 24``) and
    summarized as mean and standard deviation across days.

    Returns
    -------
    (mean_rmse, sd_rmse, n_days)
    """
    Z = np.atleast_2d(np.asarray(station_values, dtype=float))
    coords = np.asarray(coords, dtype=float)
    H, S = Z.shape
    if not 0 <= station_index < S:
        raise IndexError("station index out of range")
    obs = Z[:, station_index]
    if not np.isfinite(obs).any():
        raise ValueError("held-out station has no observations in the sample")
    others = np.delete(np.arange(S), station_index)
    target = coords[station_index][None, :]
    sub = replace(spec, overdraft_radius_km=None)
    pred = interpolate_series(sub, Z[:, others], coords[others], target).values[:, 0]
    day = np.arange(H) // 24 if day_of_hour is None else np.asarray(day_of_hour)
    good = np.isfinite(obs) & np.isfinite(pred)
    rmses = []
    for d in np.unique(day[good]):
        sel = good & (day == d)
        rmses.append(math.sqrt(float(np.mean((obs[sel] - pred[sel]) ** 2))))
    if not rmses:
        raise ValueError("no hour had both an observation and a prediction")
    r = np.asarray(rmses)
    return float(r.mean()), float(r.std(ddof=1)) if len(r) > 1 else 0.0, len(r)
