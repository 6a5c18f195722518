"""Stage functions over flat-file artifacts.

Every stage reads its inputs from the configured data paths or from the
artifact directory written by earlier stages, and writes CSV/JSON/binary
artifacts back to that directory. Stages are deterministic given the config.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import evaluation as ev
from . import features as ft
from . import ingest
from . import interp
from . import model as md
from .config import PipelineConfig, resolve, write_config

log = logging.getLogger(__name__)

TS_FMT = "%Y-%m-%dT%H:%M:%SZ"

ARTIFACTS = {
    "outage_hourly": "outage_hourly.csv",
    "station_hourly": "station_hourly.csv",
    "interp": "interp.csv",
    "interp_diag": "interp_diagnostics.json",
    "features": "features.csv",
    "targets": "target_info.csv",
    "ranking": "feature_ranking.csv",
    "model": "model.bin",
    "train_summary": "train_summary.json",
    "predictions": "predictions.csv",
    "gate_test": "gate_test.csv",
    "report": "report.json",
    "bootstrap": "bootstrap.json",
    "figure": "state_series.svg",
    "figure_data": "state_series.csv",
}

# interpolation parameter name -> (station hourly column, feature column)
_PARAM_COLUMNS = {"u": ("u", "drct_u"), "v": ("v", "drct_v"), "relh_grad": ("relh", "relh_grad")}


class MissingArtifact(FileNotFoundError):
    pass


def artifact(out: Path, key: str) -> Path:
    return Path(out) / ARTIFACTS[key]


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _fmt_hours(h) -> np.ndarray:
    return pd.DatetimeIndex(h).strftime(TS_FMT).to_numpy()


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, pd.Timestamp):
        return x.strftime(TS_FMT)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _projection_origin(statics: pd.DataFrame):
    return float(statics["lon"].mean()), float(statics["lat"].mean())


def _read_statics(cfg, base):
    st = pd.read_csv(_need(resolve(cfg, base, "statics")), dtype={"county_id": str})
    need = {"county_id", "lon", "lat", "population", "area_km2"}
    if need - set(st.columns):
        raise ValueError(f"static table lacks columns {sorted(need - set(st.columns))}")
    return st


def _wide(df: pd.DataFrame, col: str, hours, counties) -> np.ndarray:
    """Long (hour, county_id) frame -> hours x counties array."""
    w = df.pivot(index="hour", columns="county_id", values=col)
    return w.reindex(index=hours, columns=counties).to_numpy(dtype=float)


def _read_hourly(path, id_col="county_id") -> pd.DataFrame:
    df = pd.read_csv(_need(path), dtype={id_col: str})
    df["hour"] = pd.to_datetime(df["hour"], utc=True)
    return df


# ------------------------------------------------------------------ synth

def run_synth(out, spec=None, cfg: PipelineConfig | None = None) -> dict:
    """Generate the synthetic season into ``out`` plus a populated config."""
    from .synth import SyntheticSpec, generate_synthetic, write_synthetic

    spec = spec or SyntheticSpec()
    data = generate_synthetic(spec)
    paths = write_synthetic(data, out)
    cfg = cfg or PipelineConfig()
    cfg.seed = spec.seed
    (a, b), (c, d) = data.train_span, data.test_span
    cfg.spans.train_start, cfg.spans.train_end = a.strftime(TS_FMT), b.strftime(TS_FMT)
    cfg.spans.test_start, cfg.spans.test_end = c.strftime(TS_FMT), d.strftime(TS_FMT)
    cfg.targets.peak_threshold = float(spec.threshold)
    for key, p in paths.items():
        setattr(cfg.paths, key, p.name)
    cfg.validate()
    paths["config"] = Path(out) / "config.ini"
    write_config(cfg, paths["config"])
    return paths


# ----------------------------------------------------------------- ingest

def run_ingest(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    recs = ingest.read_outages_csv(_need(resolve(cfg, base, "outages")))
    grid = ingest.aggregate_max_concurrency(recs)
    vals = np.empty_like(grid.values)
    long_gap = np.zeros(grid.values.shape, dtype=bool)
    for i in range(len(grid.counties)):
        vals[i], long_gap[i] = ingest.fill_short_gaps(grid.values[i], cfg.targets.max_gap)
    filled = ingest.OutageHourlyGrid(grid.counties, grid.hours, vals, long_gap, grid.chosen_tick)
    ingest.write_hourly_outages(filled, artifact(out, "outage_hourly"))

    wx = ingest.read_weather_csv(_need(resolve(cfg, base, "weather")))
    hourly = ingest.resample_weather_hourly(wx, grid.hours[0], grid.hours[-1])
    hourly = hourly.assign(hour=_fmt_hours(hourly["hour"]))
    hourly.to_csv(artifact(out, "station_hourly"), index=False)
    return {"counties": len(grid.counties), "hours": len(grid.hours),
            "filled": int(np.count_nonzero(grid.missing & ~long_gap)),
            "still_missing": int(long_gap.sum())}


# ----------------------------------------------------------------- interp

def run_interp(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    statics = _read_statics(cfg, base)
    lon0, lat0 = _projection_origin(statics)
    stations = ingest.read_stations_csv(_need(resolve(cfg, base, "stations")), lon0, lat0)
    # counties and stations must share one projection origin
    stations["x"], stations["y"] = ingest.project_lonlat(stations["lon"], stations["lat"], lon0, lat0)
    sh = _read_hourly(artifact(out, "station_hourly"), "station_id")
    counties = sorted(statics["county_id"])
    st = statics.set_index("county_id").loc[counties]
    targets = np.c_[ingest.project_lonlat(st["lon"], st["lat"], lon0, lat0)]
    sids = stations["station_id"].tolist()
    coords = stations[["x", "y"]].to_numpy(float)
    hours = pd.DatetimeIndex(sorted(sh["hour"].unique()))

    frame = {"hour": np.repeat(_fmt_hours(hours), len(counties)),
             "county_id": np.tile(np.asarray(counties, dtype=object), len(hours))}
    diag = {}
    for name, spec in cfg.interp.items():
        src, col = _PARAM_COLUMNS.get(name, (name, name))
        if src not in sh.columns:
            raise KeyError(f"station hourly table has no column {src!r} for parameter {name!r}")
        Z = sh.pivot(index="hour", columns="station_id", values=src).reindex(index=hours, columns=sids)
        res = interp.interpolate_series(spec, Z.to_numpy(dtype=float), coords, targets)
        frame[col] = res.values.ravel()
        if spec.method in ("ordinary", "universal"):
            frame[f"{col}_variance"] = res.variance.ravel()
            frame[f"{col}_overdrafted"] = res.overdrafted.ravel().astype(int)
        diag[name] = {"method": spec.method, "fallback_hours": res.fallback_hours,
                      "jittered_hours": res.jittered_hours}
        log.info("interpolated %s (%s)", name, spec.method)
    pd.DataFrame(frame).to_csv(artifact(out, "interp"), index=False)
    _write_json(diag, artifact(out, "interp_diag"))
    return diag


# --------------------------------------------------------------- features

def run_features(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    statics = _read_statics(cfg, base)
    lon0, lat0 = _projection_origin(statics)
    iv = _read_hourly(artifact(out, "interp"))
    oh = _read_hourly(artifact(out, "outage_hourly"))
    counties = sorted(statics["county_id"])
    hours = pd.DatetimeIndex(sorted(iv["hour"].unique()))
    params = {}
    for name in ft.RAW_FEATURES:
        if name not in iv.columns:
            raise KeyError(f"interpolated table lacks {name!r}")
        params[name] = _wide(iv, name, hours, counties)
    st = statics.set_index("county_id").loc[counties]
    cxy = np.c_[ingest.project_lonlat(st["lon"], st["lat"], lon0, lat0)]
    fs = ft.build_features(params, hours, counties, statics, cxy,
                           ft.IdwConfig(cfg.features.idw_k, cfg.features.idw_power))
    Y = _wide(oh, "customers_out", hours, counties)
    t0, t1 = cfg.train_span
    tgt = ft.build_targets(Y, (hours >= t0) & (hours <= t1), cfg.targets.horizon)
    df = fs.to_frame({"flag48": tgt.flag48, "log_mag48": tgt.log_mag48})
    df["hour"] = _fmt_hours(df["hour"])
    df.to_csv(artifact(out, "features"), index=False)
    pd.DataFrame({"county_id": counties, "minimum": tgt.minimum, "maximum": tgt.maximum,
                  "threshold": tgt.threshold, "degenerate": tgt.degenerate}).to_csv(
        artifact(out, "targets"), index=False)
    return {"rows": len(df), "features": len(fs.names),
            "degenerate_counties": int(tgt.degenerate.sum())}


def _read_features(out) -> pd.DataFrame:
    df = pd.read_csv(_need(artifact(out, "features")), dtype={"county_id": str})
    df["hour"] = pd.to_datetime(df["hour"], utc=True)
    return df


def _train_rows(df, cfg):
    t0, t1 = cfg.train_span
    last = t1 - pd.Timedelta(hours=cfg.targets.horizon)
    return df[(df["hour"] >= t0) & (df["hour"] <= last) & df["flag48"].notna()
              & df["log_mag48"].notna()].reset_index(drop=True)


def _test_rows(df, cfg):
    s0, s1 = cfg.test_span
    h = pd.Timedelta(hours=cfg.targets.horizon)
    return df[(df["hour"] >= s0 - h) & (df["hour"] <= s1 - h)].reset_index(drop=True)


# ------------------------------------------------------------------ train

def _model_config(cfg: PipelineConfig) -> dict:
    return {"targets": asdict(cfg.targets), "features": asdict(cfg.features),
            "model": asdict(cfg.model), "spans": asdict(cfg.spans)}


def run_train(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    df = _train_rows(_read_features(out), cfg)
    if df.empty:
        raise ValueError("no training rows with targets in the train span")
    names = list(ft.FEATURE_NAMES)
    scaler = ft.fit_scaler(df[names].to_numpy(float), names)
    S = ft.apply_scaler(df[names].to_numpy(float), scaler)
    scaled = pd.DataFrame(S, columns=names)
    scaled["flag48"] = df["flag48"].to_numpy()
    scaled["log_mag48"] = df["log_mag48"].to_numpy()

    # undersampling works per county on an hours x counties flag grid
    hours = pd.DatetimeIndex(sorted(df["hour"].unique()))
    counties = sorted(df["county_id"].unique())
    hi = hours.get_indexer(df["hour"])
    ci = pd.Index(counties).get_indexer(df["county_id"])
    F = np.full((len(hours), len(counties)), np.nan)
    F[hi, ci] = df["flag48"].to_numpy(float)
    tc = cfg.targets
    neg_keep = ft.neg_keep_for_share(F, tc.window, tc.min_anoms, tc.positive_share)
    keep = ft.undersample_event_windows(F, tc.window, tc.min_anoms, neg_keep, cfg.seed)[hi, ci]
    sub = scaled[keep].reset_index(drop=True)
    y = sub["flag48"].to_numpy(float)

    ranking = ft.pearson_rank(sub, "log_mag48", names)
    ranking["flag_r"] = ft.pearson_rank(sub, "flag48", names).set_index("feature").loc[
        ranking["feature"], "r"].to_numpy()
    screened = ft.collinearity_screen(sub, ranking)
    ranking["retained"] = ranking["feature"].isin(screened)
    ranking.to_csv(artifact(out, "ranking"), index=False)

    mc = cfg.model
    sel = md.fit_l1_selection(sub[screened].to_numpy(float), y, screened, folds=mc.folds,
                              n_select=mc.n_select)
    if not sel.selected:
        raise md.ConvergenceError("L1 selection retained no feature")
    gate = md.fit_l2_gate(sub[sel.selected].to_numpy(float), y, sel.selected,
                          {0: 1.0, 1: mc.positive_weight}, cfg.c_grid, mc.folds, mc.tau)

    passed = md.gate_predict(gate, scaled).passed
    tcfg = md.TrainConfig(lr=mc.lr, batch_size=mc.batch_size, max_epochs=mc.max_epochs,
                          patience=mc.patience, val_fraction=mc.val_fraction, seed=cfg.seed,
                          hidden=mc.hidden)
    lstm = list(ft.LSTM_FEATURES)
    X = scaled[lstm].to_numpy(float)
    t = scaled["log_mag48"].to_numpy(float)
    if not passed.any():
        raise md.ConvergenceError("gate passed no training row; cannot fit the regressor")
    reg = md.train_regressor(X[passed], t[passed], lstm, tcfg)
    base_reg = md.train_regressor(X, t, lstm, tcfg)
    bundle = md.TwoStageModel(scaler, gate, reg, base_reg, _model_config(cfg), cfg.seed)
    md.save_bundle(bundle, artifact(out, "model"))

    summary = {
        "train_rows": len(df), "undersampled_rows": len(sub),
        "positive_share": float(y.mean()), "neg_keep": neg_keep,
        "screened_features": len(screened), "selected": sel.selected,
        "l1_lambda": sel.lam, "l1_cv_lambda": sel.cv_lam,
        "gate_C": gate.C, "gate_cv": gate.cv_scores,
        "train_pass_rate": float(passed.mean()), "regressor_rows": int(passed.sum()),
        "regressor_epochs": len(reg.history), "baseline_epochs": len(base_reg.history),
        "regressor_val_mse": min(reg.history) if reg.history else None,
        "baseline_val_mse": min(base_reg.history) if base_reg.history else None,
    }
    _write_json(_clean(summary), artifact(out, "train_summary"))
    return summary


# ---------------------------------------------------------------- predict

def _state_actual(out, hours) -> np.ndarray:
    oh = _read_hourly(artifact(out, "outage_hourly"))
    tot = oh.groupby("hour")["customers_out"].sum(min_count=1)
    return tot.reindex(hours).to_numpy(dtype=float)


def run_predict(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    bundle = md.load_bundle(_need(artifact(out, "model")))
    df = _test_rows(_read_features(out), cfg)
    if df.empty:
        raise ValueError("no feature rows for the test span")
    names = bundle.scaler.names
    S = pd.DataFrame(ft.apply_scaler(df[names].to_numpy(float), bundle.scaler), columns=names)
    g = md.gate_predict(bundle.gate, S)
    X = S[bundle.regressor.features].to_numpy(float)
    two = np.full(len(df), np.nan)
    if g.passed.any():
        two[g.passed] = bundle.regressor.predict(X[g.passed])
    basep = bundle.baseline.predict(S[bundle.baseline.features].to_numpy(float))

    s0, s1 = cfg.test_span
    hours = pd.date_range(s0, s1, freq="h")
    h = cfg.targets.horizon
    ys, avail = md.predict_state_series(df["hour"], two, g.passed, hours, h)
    yb, _ = md.predict_state_series(df["hour"], basep, np.ones(len(df), bool), hours, h)
    actual = _state_actual(out, hours)
    pd.DataFrame({"hour": _fmt_hours(hours), "actual": actual, "two_stage": ys,
                  "baseline": yb, "available": avail.astype(int)}).to_csv(
        artifact(out, "predictions"), index=False)
    pd.DataFrame({"county_id": df["county_id"], "hour": _fmt_hours(df["hour"]),
                  "probability": g.probability, "passed": g.passed.astype(int),
                  "flag48": df["flag48"], "log_mag48": df["log_mag48"],
                  "two_stage_log": two, "baseline_log": basep}).to_csv(
        artifact(out, "gate_test"), index=False)
    return {"rows": len(df), "pass_rate": g.pass_rate, "available_hours": int(avail.sum()),
            "hours": len(hours)}


# ------------------------------------------------------------------- eval

def _read_predictions(out) -> pd.DataFrame:
    p = pd.read_csv(_need(artifact(out, "predictions")))
    p["hour"] = pd.to_datetime(p["hour"], utc=True)
    return p


def _cmase_rows(y, yhat, cfg, mask):
    return [{"delta": e.delta, "n_hours": e.n_hours, "value": e.value, "reason": e.reason}
            for e in ev.cmase_table(y, yhat, cfg.targets.peak_threshold, cfg.deltas,
                                    cfg.eval.season_lag, mask)]


def _event_block(pred, y, cfg, mask):
    e = cfg.eval
    thr = cfg.targets.peak_threshold
    ps = pred if mask is None else np.where(mask, pred, np.nan)
    ref = ev.detect_events(y, thr, e.ma_k, e.merge_gap)
    got = ev.detect_events(ps, thr, e.ma_k, e.merge_gap)
    return {"ref_times": ref.times.tolist(), "pred_times": got.times.tolist(),
            "windows": ev.event_table(pred, y, cfg.omegas, thr, e.ma_k, e.merge_gap, mask)}


def _oe417(cfg, base, out):
    path = resolve(cfg, base, "external")
    if not path.exists():
        return []
    oh = _read_hourly(artifact(out, "outage_hourly"))
    internal = oh.groupby("hour")["customers_out"].sum(min_count=1)
    return [r.as_dict() for r in ev.oe417_reconcile(internal, ev.read_external_events(path))]


def _spatial(cfg, base, out, gate_test):
    path = resolve(cfg, base, "adjacency")
    oh = _read_hourly(artifact(out, "outage_hourly"))
    s0, s1 = cfg.test_span
    sea = oh[(oh["hour"] >= s0) & (oh["hour"] <= s1)]
    tot = sea.groupby("county_id")["customers_out"].sum().sort_index()
    res = {}
    if path.exists():
        adj = pd.read_csv(path, dtype=str)
        W = ev.adjacency_matrix(tot.index, adj.iloc[:, :2].itertuples(index=False, name=None))
        try:
            m = ev.morans_i(tot.to_numpy(float), W, cfg.eval.permutations, cfg.seed)
            res["morans_i"] = asdict(m)
        except ValueError as exc:
            res["morans_i"] = {"error": str(exc)}
    return res


def run_eval(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    p = _read_predictions(out)
    gt = pd.read_csv(_need(artifact(out, "gate_test")), dtype={"county_id": str})
    y = p["actual"].to_numpy(float)
    if not np.isfinite(y).all():
        raise ValueError("actual state series has missing hours in the test span")
    two = p["two_stage"].to_numpy(float)
    bas = p["baseline"].to_numpy(float)
    mask = p["available"].to_numpy(bool) if cfg.eval.scope == "available" else None

    lab = gt["flag48"].to_numpy(float)
    ok = np.isfinite(lab)
    conf = ev.confusion(lab[ok].astype(int), gt["passed"].to_numpy(int)[ok])
    conf_row = dict(conf)
    try:
        conf_row.update(ev.classification_metrics(conf["tp"], conf["fp"], conf["fn"], conf["tn"]))
    except ValueError as exc:
        conf_row["error"] = str(exc)
    pr = None
    prob = gt["probability"].to_numpy(float)
    okp = ok & np.isfinite(prob)
    if okp.any() and 0 < lab[okp].sum() < okp.sum():
        r = ev.pr_curve_auc(prob[okp], lab[okp].astype(int))
        pr = {"aucpr": r.aucpr, "roc_auc": r.roc_auc, "prevalence": r.prevalence,
              "average_precision": r.average_precision}

    h = cfg.eval.season_lag
    report = {
        "scope": cfg.eval.scope,
        "threshold": cfg.targets.peak_threshold,
        "pass_rate": float(gt["passed"].mean()),
        "available_fraction": float(p["available"].mean()),
        "confusion": conf_row,
        "pr": pr,
        "overall": {"two_stage": ev.overall_metrics(y, two, h),
                    "baseline": ev.overall_metrics(y, bas, h)},
        "cmase": _cmase_rows(y, two, cfg, mask),
        "cmase_baseline": _cmase_rows(y, bas, cfg, None),
        "events": _event_block(two, y, cfg, mask),
        "events_baseline": _event_block(bas, y, cfg, None),
        "oe417": _oe417(cfg, base, out),
        "diagnostics": {"acf": {str(k): v for k, v in ev.acf(y).items()},
                        **_spatial(cfg, base, out, gt)},
        "bootstrap": None,
    }
    bpath = artifact(out, "bootstrap")
    if bpath.exists():
        with open(bpath) as fh:
            report["bootstrap"] = json.load(fh)
    report = _clean(report)
    _write_json(report, artifact(out, "report"))
    return report


def run_bootstrap(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    p = _read_predictions(out)
    e = cfg.eval
    mask = p["available"].to_numpy(bool) if e.scope == "available" else None
    summary = {}
    for col in ("two_stage", "baseline"):
        s = ev.block_bootstrap(p["actual"].to_numpy(float), p[col].to_numpy(float), e.bootstrap_b,
                               e.block, cfg.seed, cfg.omegas, cfg.deltas,
                               cfg.targets.peak_threshold, e.season_lag,
                               mask if col == "two_stage" else None, e.pred_events, e.ma_k,
                               e.merge_gap)
        summary[col] = s.as_dict()
    summary = _clean(summary)
    _write_json(summary, artifact(out, "bootstrap"))
    rpath = artifact(out, "report")
    if rpath.exists():
        with open(rpath) as fh:
            report = json.load(fh)
        report["bootstrap"] = summary
        _write_json(report, rpath)
    return summary


# ----------------------------------------------------------------- report

def _polyline(xs, ys, color, dash=""):
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{extra} points="{pts}"/>'


def render_svg(hours, series: dict, threshold: float, width=1000, height=360) -> str:
    """Text-templated line chart of state series with a threshold line."""
    left, right, top, bottom = 70, 20, 20, 40
    T = len(hours)
    vmax = max([threshold] + [float(np.nanmax(v)) for v in series.values() if np.isfinite(v).any()])
    vmax *= 1.05
    sx = lambda i: left + (width - left - right) * i / max(T - 1, 1)
    sy = lambda v: top + (height - top - bottom) * (1.0 - v / vmax)
    xs = [sx(i) for i in range(T)]
    colors = {"actual": "#222222", "two_stage": "#d62728", "baseline": "#1f77b4"}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{left}" y1="{sy(0):.1f}" x2="{width - right}" y2="{sy(0):.1f}" stroke="#888"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{sy(0):.1f}" stroke="#888"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = vmax * frac
        parts.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:,.0f}</text>')
    hrs = pd.DatetimeIndex(hours)
    for i in range(0, T, max(T // 6, 1)):
        parts.append(f'<text x="{sx(i):.1f}" y="{height - bottom + 16}" text-anchor="middle">'
                     f'{hrs[i].strftime("%Y-%m-%d")}</text>')
    parts.append(f'<line x1="{left}" y1="{sy(threshold):.1f}" x2="{width - right}" '
                 f'y2="{sy(threshold):.1f}" stroke="#2ca02c" stroke-dasharray="6,4"/>')
    for name, v in series.items():
        parts.append(_polyline(xs, np.asarray(v, float), colors.get(name, "#9467bd")))
    for k, name in enumerate(list(series) + ["threshold"]):
        y0 = top + 14 * k + 6
        c = colors.get(name, "#2ca02c")
        parts.append(f'<line x1="{width - 170}" y1="{y0}" x2="{width - 150}" y2="{y0}" stroke="{c}"/>')
        parts.append(f'<text x="{width - 145}" y="{y0 + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_report(cfg: PipelineConfig, base, out) -> dict:
    out = Path(out)
    p = _read_predictions(out)
    series = {k: p[k].to_numpy(float) for k in ("actual", "two_stage", "baseline")}
    svg = render_svg(p["hour"], series, cfg.targets.peak_threshold)
    artifact(out, "figure").write_text(svg)
    fig = p[["hour", "actual", "two_stage", "baseline", "available"]].copy()
    fig["hour"] = _fmt_hours(fig["hour"])
    fig["threshold"] = cfg.targets.peak_threshold
    fig.to_csv(artifact(out, "figure_data"), index=False)
    return {"figure": str(artifact(out, "figure")), "data": str(artifact(out, "figure_data"))}


STAGES = {
    "ingest": run_ingest,
    "interp": run_interp,
    "features": run_features,
    "train": run_train,
    "predict": run_predict,
    "eval": run_eval,
    "bootstrap": run_bootstrap,
    "report": run_report,
}
