"""Deterministic synthetic season: counties, stations, METAR-like reports,
15-minute outage feeds, contiguity and external incident reports.

Convective episodes are moving Gaussian footprints. At hour ``t`` a storm
raises dew point, drops pressure, spikes wind and gusts and sets weather
codes at nearby stations; the same footprint weight at each county drives an
outage surge at ``t + lead`` that decays with restoration. Everything is
drawn from one seeded generator.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .evaluation import PEAK_THRESHOLD, detect_events
from .ingest import EARTH_RADIUS_M, project_lonlat

TS_FMT = "%Y-%m-%dT%H:%M:%SZ"


@dataclass
class SyntheticSpec:
    n_counties: int = 36
    n_stations: int = 24
    train_hours: int = 2208
    test_hours: int = 2208
    storm_count: int = 4
    minor_count: int = 2
    start: str = "2021-06-01T00:00:00Z"
    lon0: float = -84.5
    lat0: float = 43.5
    spacing_km: float = 50.0
    footprint_km: float = 110.0
    speed_kmh: tuple = (25.0, 45.0)
    duration_h: tuple = (10, 16)
    intensity: tuple = (0.85, 1.15)
    peak_ratio: tuple = (2.0, 3.5)   # noiseless state peak / peak threshold
    minor_ratio: float = 0.3
    lead_h: int = 48
    damage: float = 0.2              # customers out per capita at unit storm weight
    amp_range: tuple = (0.7, 1.35)   # allowed storm amplitude after calibration
    restoration: float = 0.92        # hourly persistence of outstanding outages
    noise: float = 0.08              # log-scale multiplicative outage noise
    threshold: float = PEAK_THRESHOLD
    seed: int = 20210601

    def __post_init__(self):
        if self.n_counties < 4 or self.n_stations < 4:
            raise ValueError("need at least 4 counties and 4 stations")
        if self.storm_count < 0 or self.minor_count < 0:
            raise ValueError("storm counts must be non-negative")


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    hours: pd.DatetimeIndex
    counties: pd.DataFrame
    stations: pd.DataFrame
    adjacency: pd.DataFrame
    outages: pd.DataFrame
    weather: pd.DataFrame
    external: pd.DataFrame
    truth: np.ndarray                 # hours x counties hourly outages (noise included)
    storms: list = field(default_factory=list)

    @property
    def train_span(self):
        return self.hours[0], self.hours[self.spec.train_hours - 1]

    @property
    def test_span(self):
        return self.hours[self.spec.train_hours], self.hours[-1]


def _lattice_shape(n):
    r = int(np.floor(np.sqrt(n)))
    while n % r:
        r -= 1
    return r, n // r


def _to_lonlat(x, y, lon0, lat0):
    lat = lat0 + np.rad2deg(np.asarray(y) / EARTH_RADIUS_M)
    lon = lon0 + np.rad2deg(np.asarray(x) / (EARTH_RADIUS_M * np.cos(np.deg2rad(lat0))))
    return lon, lat


def _counties(spec, rng):
    nr, nc = _lattice_shape(spec.n_counties)
    s = spec.spacing_km * 1000.0
    gx, gy = np.meshgrid((np.arange(nc) - (nc - 1) / 2) * s, (np.arange(nr) - (nr - 1) / 2) * s)
    x = gx.ravel() + rng.uniform(-0.15, 0.15, gx.size) * s
    y = gy.ravel() + rng.uniform(-0.15, 0.15, gy.size) * s
    lon, lat = _to_lonlat(x, y, spec.lon0, spec.lat0)
    pop = np.round(np.exp(rng.normal(np.log(60_000), 0.8, x.size))).astype(int)
    area = np.round(rng.uniform(0.7, 1.1, x.size) * (spec.spacing_km ** 2), 1)
    ids = [f"{26001 + 2 * i:05d}" for i in range(x.size)]
    df = pd.DataFrame({"county_id": ids, "lon": np.round(lon, 5), "lat": np.round(lat, 5),
                       "population": pop, "area_km2": area})
    pairs = []
    for r in range(nr):
        for c in range(nc):
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < nr and 0 <= cc < nc:
                    pairs.append((ids[r * nc + c], ids[rr * nc + cc]))
    adj = pd.DataFrame(pairs, columns=["county_a", "county_b"])
    return df, adj, (nr, nc)


def _stations(spec, rng, half_w, half_h):
    # denser toward the south edge, with a minimum spacing
    pts = []
    tries = 0
    while len(pts) < spec.n_stations:
        tries += 1
        if tries > 100_000:
            raise RuntimeError("could not place stations")
        x = rng.uniform(-half_w, half_w)
        y = -half_h + 2 * half_h * rng.uniform() ** 1.8
        if all(np.hypot(x - a, y - b) > 18_000 for a, b in pts):
            pts.append((x, y))
    xy = np.asarray(pts)
    lon, lat = _to_lonlat(xy[:, 0], xy[:, 1], spec.lon0, spec.lat0)
    ids = [f"K{chr(65 + i // 26)}{chr(65 + i % 26)}X" for i in range(len(xy))]
    return pd.DataFrame({"station_id": ids, "lon": np.round(lon, 5), "lat": np.round(lat, 5)})


def _envelope(dt, dur):
    # 3 h ramp up, plateau, 3 h ramp down
    up = np.clip((dt + 3.0) / 3.0, 0.0, 1.0)
    down = np.clip((dur + 3.0 - dt) / 3.0, 0.0, 1.0)
    return np.minimum(up, down)


def _footprint(storm, xy, H):
    """Storm weight at points ``xy`` for every hour (hours x points)."""
    t = np.arange(H)[:, None] - storm["onset"]
    env = _envelope(t, storm["duration"])
    cx = storm["x0"] + storm["vx"] * t
    cy = storm["y0"] + storm["vy"] * t
    d2 = (xy[None, :, 0] - cx) ** 2 + (xy[None, :, 1] - cy) ** 2
    return storm["amp"] * env * np.exp(-d2 / (2 * storm["radius"] ** 2))


def _outage_response(weight, pop, spec):
    """Outstanding outages per county from storm weight (hours x counties)."""
    H = weight.shape[0]
    damage = np.zeros_like(weight)
    lead = spec.lead_h
    damage[lead:] = pop[None, :] * spec.damage * np.power(weight[:H - lead], 1.5)
    out = np.zeros_like(weight)
    rho = spec.restoration
    for t in range(H):
        prev = out[t - 1] if t else 0.0
        out[t] = rho * prev + (1 - rho) * damage[t]
    return out


def _plan_storms(spec, rng, season_start, season_len, count, minor, half_w, half_h, H):
    """Onset hours (weather time) spread over a season, separated widely."""
    lead = spec.lead_h
    first = season_start + 96 - lead
    last = season_start + season_len - 200 - lead
    total = count + minor
    if total == 0:
        return []
    slots = np.linspace(first, last, total + 1)[:-1]
    width = (last - first) / total
    kinds = np.array([True] * count + [False] * minor)
    rng.shuffle(kinds)
    storms = []
    for k, s in enumerate(slots):
        onset = int(s + rng.uniform(0.1, 0.4) * width)
        speed = rng.uniform(*spec.speed_kmh) * 1000.0
        ang = rng.uniform(0, 2 * np.pi)
        dur = int(rng.integers(spec.duration_h[0], spec.duration_h[1] + 1))
        vx, vy = speed * np.cos(ang), speed * np.sin(ang)
        # put the track midpoint inside the domain
        mx, my = rng.uniform(-0.5 * half_w, 0.5 * half_w), rng.uniform(-0.5 * half_h, 0.5 * half_h)
        storms.append({
            "onset": onset, "duration": dur, "major": bool(kinds[k]),
            "x0": mx - vx * dur / 2, "y0": my - vy * dur / 2, "vx": vx, "vy": vy,
            "radius": spec.footprint_km * 1000.0 * (1.0 if kinds[k] else 0.6),
            "amp": float(rng.uniform(*spec.intensity)),
        })
    return storms


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    H = spec.train_hours + spec.test_hours
    hours = pd.date_range(pd.Timestamp(spec.start), periods=H, freq="h")
    counties, adjacency, (nr, nc) = _counties(spec, rng)
    cxy = np.c_[project_lonlat(counties["lon"], counties["lat"], spec.lon0, spec.lat0)]
    half_w = (nc / 2 + 0.3) * spec.spacing_km * 1000.0
    half_h = (nr / 2 + 0.3) * spec.spacing_km * 1000.0
    stations = _stations(spec, rng, half_w, half_h)
    sxy = np.c_[project_lonlat(stations["lon"], stations["lat"], spec.lon0, spec.lat0)]
    pop = counties["population"].to_numpy(float)

    storms = []
    for s0, L in ((0, spec.train_hours), (spec.train_hours, spec.test_hours)):
        storms += _plan_storms(spec, rng, s0, L, spec.storm_count, spec.minor_count,
                               half_w, half_h, H)

    # scale each storm so its noiseless state peak lands in the intended band
    w_cty = np.zeros((H, len(cxy)))
    for st in storms:
        w = _footprint(st, cxy, H)
        peak = _outage_response(w, pop, spec).sum(axis=1).max()
        target = (rng.uniform(*spec.peak_ratio) if st["major"] else spec.minor_ratio) * spec.threshold
        if peak > 0:
            # minor storms may be weakened freely; only the upper bound keeps weather plausible
            lo = spec.amp_range[0] if st["major"] else 0.0
            st["amp"] = float(np.clip(st["amp"] * (target / peak) ** (1 / 1.5), lo, spec.amp_range[1]))
        w_cty += _footprint(st, cxy, H)
    w_sta = np.zeros((H, len(sxy)))
    for st in storms:
        w_sta += _footprint(st, sxy, H)

    truth = _outage_response(w_cty, pop, spec)
    truth *= np.exp(rng.normal(0.0, spec.noise, truth.shape))
    # zero-inflated background noise
    bg = (rng.random(truth.shape) < 0.3) * rng.poisson(pop[None, :] / 4000.0 + 1.0, truth.shape)
    truth = np.round(truth + bg)

    for s0, L in ((0, spec.train_hours), (spec.train_hours, spec.test_hours)):
        ev = detect_events(truth[s0:s0 + L].sum(axis=1), spec.threshold)
        if len(ev) != spec.storm_count:
            raise RuntimeError(f"synthetic season starting at hour {s0} has {len(ev)} peak "
                               f"events instead of {spec.storm_count}")

    outages = _outage_records(truth, hours, counties["county_id"].tolist(), rng)
    weather = _weather_records(w_sta, sxy, hours, stations["station_id"].tolist(), rng)
    external = _external_reports(truth, hours, storms, spec, rng)
    return SyntheticData(spec, hours, counties, stations, adjacency, outages, weather,
                         external, truth, storms)


def _outage_records(truth, hours, ids, rng):
    H, C = truth.shape
    nxt = np.vstack([truth[1:], truth[-1:]])
    frac = np.arange(4)[None, :, None] / 4.0
    q = truth[:, None, :] + (nxt - truth)[:, None, :] * frac
    q = np.round(q * rng.uniform(0.97, 1.03, q.shape)).clip(min=0)
    keep = np.ones((H, C), dtype=bool)
    # a few short feed gaps and one long one, away from the edges
    for _ in range(max(3, C // 6)):
        c = rng.integers(C)
        t = rng.integers(100, H - 100)
        keep[t:t + rng.integers(1, 5), c] = False
    keep[300:306, 0] = False
    hh, kk, cc = np.nonzero(np.broadcast_to(keep[:, None, :], q.shape))
    stamps = hours[hh] + pd.to_timedelta(kk * 15, unit="m")
    return pd.DataFrame({
        "county_id": np.asarray(ids, dtype=object)[cc],
        "timestamp_utc": stamps.strftime(TS_FMT),
        "customers_out": q[hh, kk, cc].astype(np.int64),
    })


def _smooth_field(rng, H, xy, n_modes, scale, rho):
    """Spatially smooth AR(1) field from random plane waves (hours x points)."""
    k = rng.uniform(2 * np.pi / 600e3, 2 * np.pi / 200e3, n_modes)
    ang = rng.uniform(0, 2 * np.pi, n_modes)
    ph = rng.uniform(0, 2 * np.pi, n_modes)
    basis = np.cos(xy[:, 0:1] * (k * np.cos(ang)) + xy[:, 1:2] * (k * np.sin(ang)) + ph)
    a = np.zeros((H, n_modes))
    e = rng.normal(0, np.sqrt(1 - rho ** 2), (H, n_modes))
    for t in range(1, H):
        a[t] = rho * a[t - 1] + e[t]
    return scale * (a @ basis.T) / np.sqrt(n_modes / 2)


def _weather_records(w, sxy, hours, ids, rng):
    H, S = w.shape
    hod = hours.hour.to_numpy()[:, None]
    south = (sxy[:, 1] - sxy[:, 1].min()) / max(np.ptp(sxy[:, 1]), 1.0)
    tmp = 72 - 4 * south[None, :] + 9 * np.sin(2 * np.pi * (hod - 14) / 24 + np.pi / 2) \
        + _smooth_field(rng, H, sxy, 6, 3.0, 0.98) - 5 * w
    dew = 57 - 3 * south[None, :] + _smooth_field(rng, H, sxy, 6, 4.0, 0.99) + 14 * w
    dew = np.minimum(dew, tmp - 0.5)
    alti = 29.98 + _smooth_field(rng, H, sxy, 4, 0.08, 0.995) - 0.18 * w
    sknt = np.clip(6 + _smooth_field(rng, H, sxy, 6, 2.5, 0.9) + rng.normal(0, 1.2, (H, S)) + 20 * w, 0, None)
    drct = np.mod(225 + _smooth_field(rng, H, sxy, 4, 40.0, 0.95) + rng.normal(0, 15, (H, S)), 360)
    p01i = np.where(rng.random((H, S)) < 0.03, rng.exponential(0.02, (H, S)), 0.0) + 0.5 * w ** 1.3
    gust_on = (sknt >= 14) | (w > 0.15)
    gust = np.where(gust_on, sknt + 6 + 12 * w + rng.uniform(0, 4, (H, S)), np.nan)

    rows = []
    minute = {0: 53, 1: 20}
    for rep in (0, 1):
        # second (special) report only where a storm is active
        active = np.ones((H, S), dtype=bool) if rep == 0 else (w > 0.1)
        jit = 1.0 if rep == 0 else 1.08
        hh, ss = np.nonzero(active)
        tk = np.round(tmp[hh, ss] + rng.normal(0, 0.3, len(hh)), 1)
        dk = np.round(dew[hh, ss] + rng.normal(0, 0.3, len(hh)), 1)
        dk = np.minimum(dk, tk)
        rh = 100 * np.exp(17.625 * (dk - 32) / 1.8 / (243.04 + (dk - 32) / 1.8)) \
            / np.exp(17.625 * (tk - 32) / 1.8 / (243.04 + (tk - 32) / 1.8))
        sk = np.round(sknt[hh, ss] * jit)
        dr = np.where(sk > 0, np.mod(np.round(drct[hh, ss] / 10) * 10, 360), 0)
        wi = w[hh, ss]
        codes = np.where(wi > 0.6, "TS|SQ|HR", np.where(wi > 0.45, "TS|HR",
                         np.where(wi > 0.25, "TS", "")))
        al = np.round(alti[hh, ss], 2)
        part = pd.DataFrame({
            "station_id": np.asarray(ids, dtype=object)[ss],
            "timestamp_utc": (hours[hh] + pd.Timedelta(minutes=minute[rep])).strftime(TS_FMT),
            "tmpf": tk, "dwpf": dk, "relh": np.round(np.clip(rh, 0, 100), 2),
            "drct": dr, "sknt": sk,
            "p01i": np.round(p01i[hh, ss], 2),
            "alti": al, "mslp": np.round(al * 33.8639 + 0.6, 1),
            "gust": np.round(gust[hh, ss] * jit),
            "wxcodes": codes,
        })
        rows.append(part)
    df = pd.concat(rows, ignore_index=True)
    # sparse missingness: some stations never report mslp, some fields drop out
    no_mslp = np.asarray(ids, dtype=object)[rng.random(S) < 0.3]
    df.loc[df["station_id"].isin(no_mslp), "mslp"] = np.nan
    for col in ("tmpf", "dwpf", "alti", "sknt"):
        drop = rng.random(len(df)) < 0.01
        df.loc[drop, col] = np.nan
    df.loc[df["sknt"].isna(), "drct"] = np.nan
    df = df.sort_values(["station_id", "timestamp_utc"], kind="stable").reset_index(drop=True)
    return df


def _external_reports(truth, hours, storms, spec, rng):
    """Incident reports for major storms plus one loss-of-monitoring alert."""
    state = truth.sum(axis=1)
    recs = []
    for st in storms:
        if not st["major"]:
            continue
        t0 = st["onset"] + spec.lead_h
        t1 = min(t0 + st["duration"] + 12, len(hours) - 1)
        seg = state[t0:t1 + 1]
        mag = float(seg.max()) * rng.uniform(0.8, 1.25)
        begin = hours[t0] + pd.Timedelta(minutes=int(rng.integers(0, 60)))
        end = "Unknown" if rng.random() < 0.3 else (hours[t1]).strftime("%Y-%m-%d %H:%M")
        recs.append((begin.strftime("%Y-%m-%d %H:%M"), end, str(int(round(mag, -2)))))
    t = len(hours) // 2 + 37
    recs.append((hours[t].strftime("%Y-%m-%d %H:%M"), hours[t + 2].strftime("%Y-%m-%d %H:%M"), "0"))
    recs.sort()
    return pd.DataFrame(recs, columns=["begin_utc", "end_utc", "customers"])


def write_synthetic(data: SyntheticData, out_dir) -> dict:
    """Write every synthetic table as CSV; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "outages": out / "outages.csv",
        "weather": out / "weather.csv",
        "stations": out / "stations.csv",
        "statics": out / "counties.csv",
        "adjacency": out / "adjacency.csv",
        "external": out / "external_events.csv",
    }
    data.outages.to_csv(paths["outages"], index=False)
    data.weather.to_csv(paths["weather"], index=False, float_format="%.6g")
    data.stations.to_csv(paths["stations"], index=False)
    data.counties.to_csv(paths["statics"], index=False)
    data.adjacency.to_csv(paths["adjacency"], index=False)
    data.external.to_csv(paths["external"], index=False)
    return paths


def spec_as_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
