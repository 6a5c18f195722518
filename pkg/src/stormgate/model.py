"""Two-stage forecaster: logistic gate followed by a one-step recurrent regressor.

The gate is an L2 logistic model over a handful of L1-selected features.
Rows it passes go to a single-step LSTM cell (16 units) with a dense output
trained on the log1p county outage 48 h ahead. The same regressor trained on
all rows is the ungated baseline.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from .evaluation import average_precision
from .features import ScalerParams


class ConvergenceError(RuntimeError):
    pass


# -------------------------------------------------------------- logistic

def _logloss_terms(z, y):
    # log(1 + e^z) - y z, stable for large |z|
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z


def time_series_folds(n: int, folds: int = 3):
    """Forward-chained splits: fold k trains on chunks ``[0, k]`` and
    validates on chunk ``k + 1`` of ``folds + 1`` contiguous chunks."""
    edges = np.linspace(0, n, folds + 2).astype(int)
    for k in range(1, folds + 1):
        yield np.arange(0, edges[k]), np.arange(edges[k], edges[k + 1])


def l1_logistic(X, y, lam: float, w0=None, b0=None, max_iter: int = 5000, tol: float = 1e-9):
    """Mean logistic loss + ``lam * |w|_1`` (intercept free), by accelerated
    proximal gradient with backtracking and monotone restarts.

    Stops when the relative objective change falls below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=float)
    b = float(np.log((y.mean() + 1e-12) / (1 - y.mean() + 1e-12))) if b0 is None else float(b0)

    def smooth_z(z):
        return float(np.mean(_logloss_terms(z, y)))

    L = max(np.sum(X * X) / (4.0 * n), 1e-6) / 8.0
    zw = X @ w + b
    vw, vb, zv, t = w.copy(), b, zw.copy(), 1.0
    F = smooth_z(zw) + lam * float(np.abs(w).sum())
    for _ in range(max_iter):
        f_v = smooth_z(zv)
        r = expit(zv) - y
        gw, gb = X.T @ r / n, float(r.mean())
        L *= 0.9  # let the step grow back after backtracking
        while True:
            nw = vw - gw / L
            nw = np.sign(nw) * np.maximum(np.abs(nw) - lam / L, 0.0)
            nb = vb - gb / L
            dw, db = nw - vw, nb - vb
            zn = X @ nw + nb
            f_n = smooth_z(zn)
            if f_n <= f_v + gw @ dw + gb * db + 0.5 * L * (dw @ dw + db * db) + 1e-15:
                break
            L *= 2.0
        F_new = f_n + lam * float(np.abs(nw).sum())
        if F_new > F:
            # restart momentum from the last accepted iterate
            vw, vb, zv, t = w.copy(), b, zw.copy(), 1.0
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        beta = (t - 1) / t_new
        vw = nw + beta * (nw - w)
        vb = nb + beta * (nb - b)
        zv = zn + beta * (zn - zw)
        done = abs(F - F_new) <= tol * max(1.0, abs(F_new))
        w, b, zw, F, t = nw, nb, zn, F_new, t_new
        if done:
            break
    return w, b


def lambda_max(X, y) -> float:
    """Smallest L1 strength that zeroes every coefficient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean())) / len(y)))


@dataclass
class SelectionResult:
    selected: list
    lam: float
    cv_lam: float
    coef: np.ndarray
    cv_scores: dict = field(default_factory=dict)


def _cv_ap(fit, X, y, folds):
    scores = []
    for tr, va in time_series_folds(len(y), folds):
        if y[tr].min() == y[tr].max() or y[va].min() == y[va].max():
            continue
        scores.append(average_precision(fit(X[tr], y[tr])(X[va]), y[va]))
    return float(np.mean(scores)) if scores else float("nan")


def _cv_ap_path(X, y, lambdas, folds):
    """CV average precision per L1 strength; each fold walks the strengths
    from strongest to weakest with warm starts."""
    order = sorted((float(l) for l in lambdas), reverse=True)
    scores = {lam: [] for lam in order}
    for tr, va in time_series_folds(len(y), folds):
        if y[tr].min() == y[tr].max() or y[va].min() == y[va].max():
            continue
        warm = (None, None)
        for lam in order:
            w, b = l1_logistic(X[tr], y[tr], lam, *warm)
            warm = (w, b)
            scores[lam].append(average_precision(X[va] @ w + b, y[va]))
    return {lam: float(np.mean(v)) if v else float("nan") for lam, v in scores.items()}


def fit_l1_selection(X, y, names, lambdas=None, folds: int = 3, n_select: int | None = 8,
                     max_bisect: int = 40) -> SelectionResult:
    """Choose features by L1 logistic regression.

    The strength is first picked by forward-chained time-series CV on
    average precision over ``lambdas`` (default: 12 values log-spaced below
    :func:`lambda_max`). If ``n_select`` is given, the strength is then
    bisected (in log space) toward exactly that many non-zero coefficients;
    the closest count reached is used.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise ValueError("labels are all one class")
    # exact duplicate columns make the L1 problem non-strictly convex; keep the first copy
    _, first = np.unique(X.T, axis=0, return_index=True)
    cols = np.sort(first)
    names = list(names)
    full_names, X = names, X[:, cols]
    names = [full_names[c] for c in cols]
    lmax = lambda_max(X, y)
    if lambdas is None:
        lambdas = lmax * np.logspace(-0.05, -3, 12)

    cv = _cv_ap_path(X, y, lambdas, folds)
    finite = {k: v for k, v in cv.items() if np.isfinite(v)}
    cv_lam = max(finite, key=lambda k: (finite[k], k)) if finite else float(lambdas[0])

    def count(lam, warm=None):
        w, b = l1_logistic(X, y, lam, *(warm or (None, None)))
        return int(np.sum(np.abs(w) > 1e-8)), w, b

    lam = cv_lam
    k, w, b = count(lam)
    if n_select is not None and k != n_select:
        best = (abs(k - n_select), lam, w)
        lo, hi = (lam, lmax * 1.01) if k > n_select else (lam * 1e-4, lam)
        for _ in range(max_bisect):
            mid = float(np.sqrt(lo * hi))
            k, w, b = count(mid, (w, b))
            if abs(k - n_select) < best[0]:
                best = (abs(k - n_select), mid, w)
            if k == n_select:
                break
            if k > n_select:
                lo = mid
            else:
                hi = mid
        _, lam, w = best
    sel = [n for n, c in zip(names, w) if abs(c) > 1e-8]
    coef = np.zeros(len(full_names))
    coef[cols] = w
    return SelectionResult(sel, float(lam), float(cv_lam), coef, cv)


def l2_logistic(X, y, C: float, class_weight=None, tol: float = 1e-6, max_iter: int = 100):
    """Weighted cross-entropy (summed) + ``|w|^2 / (2C)`` by damped Newton.

    The intercept is not penalized. Raises :class:`ConvergenceError` if the
    gradient norm is still above ``tol`` after ``max_iter`` steps.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    cw = class_weight or {0: 1.0, 1: 1.0}
    s = np.where(y > 0.5, cw[1], cw[0]).astype(float)
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    reg = np.r_[np.full(d, 1.0 / C), 0.0]
    theta = np.zeros(d + 1)

    def obj(th):
        return float(np.sum(s * _logloss_terms(A @ th, y))) + 0.5 * float(np.sum(reg * th * th))

    J = obj(theta)
    for it in range(max_iter):
        p = expit(A @ theta)
        g = A.T @ (s * (p - y)) + reg * theta
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return theta[:d], float(theta[d]), it
        Hm = (A * (s * p * (1 - p))[:, None]).T @ A + np.diag(reg)
        Hm[np.diag_indices_from(Hm)] += 1e-12
        step = np.linalg.solve(Hm, g)
        a = 1.0
        while a > 1e-10:
            cand = theta - a * step
            Jc = obj(cand)
            if Jc <= J - 1e-4 * a * float(g @ step):
                break
            a *= 0.5
        else:
            # no decrease available at machine precision: accept if near stationary
            if gn < tol * 1e3:
                return theta[:d], float(theta[d]), it
            raise ConvergenceError(f"line search failed at gradient norm {gn:.3e}")
        theta, J = cand, Jc
    p = expit(A @ theta)
    gn = float(np.linalg.norm(A.T @ (s * (p - y)) + reg * theta))
    if gn < tol:
        return theta[:d], float(theta[d]), max_iter
    raise ConvergenceError(f"gradient norm {gn:.3e} after {max_iter} Newton steps (C={C})")


@dataclass
class LogisticGate:
    features: list
    coef: np.ndarray
    intercept: float
    C: float
    class_weight: dict
    tau: float = 0.70
    cv_scores: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("gate threshold must lie in (0, 1)")
        if len(self.features) < 1:
            raise ValueError("gate needs at least one feature")
        self.coef = np.asarray(self.coef, dtype=float)

    def proba(self, X) -> np.ndarray:
        return expit(np.asarray(X, dtype=float) @ self.coef + self.intercept)


def fit_l2_gate(X_sel, y, features, class_weight=None, Cs=(1e-3, 1e-2, 1e-1, 1.0),
                folds: int = 3, tau: float = 0.70) -> LogisticGate:
    """Pick ``C`` by forward-chained CV on average precision, then refit on all rows."""
    X = np.asarray(X_sel, dtype=float)
    y = np.asarray(y, dtype=float)
    cw = {0: 1.0, 1: 5.0} if class_weight is None else class_weight

    def fitter(C):
        def fit(Xt, yt):
            w, b, _ = l2_logistic(Xt, yt, C, cw)
            return lambda Xv: Xv @ w + b
        return fit

    cv = {float(C): _cv_ap(fitter(C), X, y, folds) for C in Cs}
    finite = {k: v for k, v in cv.items() if np.isfinite(v)}
    # ties go to the stronger penalty
    C = max(finite, key=lambda k: (finite[k], -k)) if finite else float(Cs[0])
    w, b, _ = l2_logistic(X, y, C, cw)
    return LogisticGate(list(features), w, b, C, {int(k): float(v) for k, v in cw.items()}, tau, cv)


@dataclass
class GateOutput:
    probability: np.ndarray
    passed: np.ndarray
    rejected: np.ndarray
    pass_rate: float


def gate_predict(gate: LogisticGate, rows) -> GateOutput:
    """Probabilities and pass flags. ``rows`` is a DataFrame or a matrix
    already in ``gate.features`` order; rows with a missing selected
    feature are rejected (never passed)."""
    if isinstance(rows, pd.DataFrame):
        absent = [f for f in gate.features if f not in rows.columns]
        if absent:
            raise KeyError(f"rows lack gate feature(s): {', '.join(absent)}")
        X = rows[gate.features].to_numpy(float)
    else:
        X = np.asarray(rows, dtype=float)
        if X.shape[1] != len(gate.features):
            raise ValueError(f"expected {len(gate.features)} gate columns, got {X.shape[1]}")
    rejected = ~np.isfinite(X).all(axis=1)
    p = gate.proba(np.where(rejected[:, None], 0.0, X))
    p[rejected] = np.nan
    passed = ~rejected & (p >= gate.tau)
    rate = float(passed.mean()) if len(passed) else 0.0
    return GateOutput(p, passed, rejected, rate)


# ---------------------------------------------------------- recurrent cell

GATES = ("input", "forget", "cell", "output")
PARAM_NAMES = ("W", "U", "b", "w_out", "b_out")


@dataclass
class RecurrentRegressor:
    """One LSTM step (gate blocks stacked input/forget/cell/output) + dense output.

    Shapes: W (4H, n_in), U (4H, H), b (4H,), w_out (H,), b_out (1,).
    """
    features: list
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    history: list = field(default_factory=list)

    def __post_init__(self):
        H = self.hidden
        if self.W.shape != (4 * H, len(self.features)) or self.U.shape != (4 * H, H) \
                or self.b.shape != (4 * H,) or self.b_out.shape != (1,):
            raise ValueError("inconsistent recurrent regressor shapes")

    @property
    def hidden(self) -> int:
        return len(self.w_out)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def set_params(self, p: dict) -> None:
        for k in PARAM_NAMES:
            setattr(self, k, np.array(p[k], dtype=float))

    def predict(self, X) -> np.ndarray:
        return cell_forward(self.params(), X)[0]


def init_regressor(features, hidden: int = 16, seed: int = 0, out_bias: float = 0.0) -> RecurrentRegressor:
    """Uniform +-1/sqrt(fan_in) initialization from a seeded generator."""
    rng = np.random.default_rng(seed)
    n = len(features)
    a_in = 1.0 / np.sqrt(n + hidden)
    a_out = 1.0 / np.sqrt(hidden)
    return RecurrentRegressor(
        list(features),
        rng.uniform(-a_in, a_in, (4 * hidden, n)),
        rng.uniform(-a_in, a_in, (4 * hidden, hidden)),
        np.zeros(4 * hidden),
        rng.uniform(-a_out, a_out, hidden),
        np.array([float(out_bias)]),
    )


def cell_forward(p: dict, X, h0=None, c0=None):
    """One cell step from state ``(h0, c0)`` (zeros by default) then the
    affine output. Returns predictions and a cache for :func:`cell_backward`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    H = len(p["w_out"])
    if X.shape[1] != p["W"].shape[1]:
        raise ValueError(f"expected {p['W'].shape[1]} input columns, got {X.shape[1]}")
    n = X.shape[0]
    h0 = np.zeros((n, H)) if h0 is None else np.asarray(h0, dtype=float)
    c0 = np.zeros((n, H)) if c0 is None else np.asarray(c0, dtype=float)
    z = X @ p["W"].T + h0 @ p["U"].T + p["b"]
    i = expit(z[:, :H])
    f = expit(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = expit(z[:, 3 * H:])
    c = f * c0 + i * g
    tc = np.tanh(c)
    h = o * tc
    yhat = h @ p["w_out"] + p["b_out"][0]
    return yhat, (X, h0, c0, i, f, g, o, c, tc, h)


def cell_backward(p: dict, cache, dy) -> dict:
    """Gradients of ``sum(dy * yhat)`` with respect to every parameter."""
    X, h0, c0, i, f, g, o, c, tc, h = cache
    dy = np.asarray(dy, dtype=float)
    d_wout = h.T @ dy
    d_bout = np.array([dy.sum()])
    dh = dy[:, None] * p["w_out"][None, :]
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc)
    dz = np.hstack([dc * g * i * (1 - i),
                    dc * c0 * f * (1 - f),
                    dc * i * (1 - g * g),
                    do * o * (1 - o)])
    return {"W": dz.T @ X, "U": dz.T @ h0, "b": dz.sum(axis=0), "w_out": d_wout, "b_out": d_bout}


def mse_and_grad(p: dict, X, t, h0=None, c0=None):
    yhat, cache = cell_forward(p, X, h0, c0)
    r = yhat - np.asarray(t, dtype=float)
    loss = float(np.mean(r * r))
    return loss, cell_backward(p, cache, 2.0 * r / len(r))


def gradient_check(p: dict, X, t, h0=None, c0=None, eps: float = 1e-5) -> dict:
    """Per-tensor relative error ``|a - n| / (|a| + |n|)`` between analytic and
    central-difference gradients of the MSE (0 when both vanish)."""
    _, g = mse_and_grad(p, X, t, h0, c0)
    out = {}
    for k in PARAM_NAMES:
        num = np.zeros_like(p[k])
        base = p[k]
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = base[ix]
            base[ix] = orig + eps
            lp = mse_and_grad(p, X, t, h0, c0)[0]
            base[ix] = orig - eps
            lm = mse_and_grad(p, X, t, h0, c0)[0]
            base[ix] = orig
            num[ix] = (lp - lm) / (2 * eps)
        a, nrm = np.linalg.norm(g[k]), np.linalg.norm(num)
        out[k] = 0.0 if a + nrm == 0 else float(np.linalg.norm(g[k] - num) / (a + nrm))
    return out


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 2
    val_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def train_regressor(X, t, features, cfg: TrainConfig = TrainConfig()) -> RecurrentRegressor:
    """Adam on mean squared error with seeded shuffling and early stopping.

    Rows are taken to be in time order; the final ``val_fraction`` of them
    is held out for early stopping and the best weights are restored.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(X) == 0:
        raise ValueError("no training rows")
    if not (np.isfinite(X).all() and np.isfinite(t).all()):
        raise ValueError("training inputs must be finite")
    n_val = int(round(len(X) * cfg.val_fraction)) if len(X) >= 10 else 0
    n_tr = len(X) - n_val
    Xtr, ttr, Xva, tva = X[:n_tr], t[:n_tr], X[n_tr:], t[n_tr:]
    reg = init_regressor(features, cfg.hidden, cfg.seed, out_bias=float(ttr.mean()))
    p = reg.params()
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    rng = np.random.default_rng([cfg.seed, 1])
    step = 0

    def val_loss(p):
        Xe, te = (Xva, tva) if n_val else (Xtr, ttr)
        r = cell_forward(p, Xe)[0] - te
        return float(np.mean(r * r))

    best = val_loss(p)
    best_p = {k: a.copy() for k, a in p.items()}
    history, stall = [], 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        for s in range(0, n_tr, cfg.batch_size):
            bi = order[s:s + cfg.batch_size]
            _, g = mse_and_grad(p, Xtr[bi], ttr[bi])
            step += 1
            c1 = 1 - cfg.beta1 ** step
            c2 = 1 - cfg.beta2 ** step
            for k in PARAM_NAMES:
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k]
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g[k] * g[k]
                p[k] = p[k] - cfg.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.eps)
        vl = val_loss(p)
        history.append(vl)
        if vl < best:
            best, best_p, stall = vl, {k: a.copy() for k, a in p.items()}, 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    reg.set_params(best_p)
    reg.history = history
    return reg


# ----------------------------------------------------------- state series

def predict_state_series(row_hours, log_pred, passed, out_hours, horizon: int = 48):
    """Sum county predictions per target hour ``t + horizon``.

    ``log_pred`` is on the log1p scale; values are inverted with expm1 and
    clamped at 0. Returns the state series on ``out_hours`` and an
    availability mask (hours receiving at least one passed row).
    """
    out_hours = pd.DatetimeIndex(out_hours)
    tgt = pd.DatetimeIndex(row_hours) + pd.Timedelta(hours=horizon)
    passed = np.asarray(passed, dtype=bool)
    val = np.maximum(np.expm1(np.asarray(log_pred, dtype=float)), 0.0)
    pos = out_hours.get_indexer(tgt)
    use = passed & (pos >= 0) & np.isfinite(val)
    series = np.zeros(len(out_hours))
    np.add.at(series, pos[use], val[use])
    avail = np.zeros(len(out_hours), dtype=bool)
    avail[pos[use]] = True
    return series, avail


# ---------------------------------------------------------------- bundle

MAGIC = b"SGMB"
BUNDLE_VERSION = 1


@dataclass
class TwoStageModel:
    scaler: ScalerParams
    gate: LogisticGate
    regressor: RecurrentRegressor
    baseline: RecurrentRegressor
    config: dict = field(default_factory=dict)
    seed: int = 0


def save_bundle(model: TwoStageModel, path) -> None:
    """Write the model as magic, version, header length, JSON header, tensors."""
    tensors, table, offset = [], [], 0
    for prefix, reg in (("regressor", model.regressor), ("baseline", model.baseline)):
        for k in PARAM_NAMES:
            a = np.ascontiguousarray(getattr(reg, k), dtype="<f8")
            table.append({"name": f"{prefix}.{k}", "shape": list(a.shape), "offset": offset})
            tensors.append(a.tobytes(order="C"))
            offset += a.nbytes
    g = model.gate
    header = {
        "format_version": BUNDLE_VERSION,
        "seed": int(model.seed),
        "config": model.config,
        "scaler": model.scaler.as_dict(),
        "gate": {"features": g.features, "coef": g.coef.tolist(), "intercept": g.intercept,
                 "C": g.C, "class_weight": {str(k): v for k, v in g.class_weight.items()},
                 "tau": g.tau},
        "regressor_features": model.regressor.features,
        "baseline_features": model.baseline.features,
        "tensors": table,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", BUNDLE_VERSION, len(hb)))
        fh.write(hb)
        for blob in tensors:
            fh.write(blob)


def load_bundle(path) -> TwoStageModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a model bundle")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arrays[t["name"]] = np.frombuffer(data, dtype="<f8", count=n,
                                          offset=base + t["offset"]).reshape(t["shape"]).astype(float)
    regs = {}
    for prefix in ("regressor", "baseline"):
        regs[prefix] = RecurrentRegressor(header[f"{prefix}_features"],
                                          *(arrays[f"{prefix}.{k}"] for k in PARAM_NAMES))
    g = header["gate"]
    gate = LogisticGate(g["features"], np.asarray(g["coef"], float), float(g["intercept"]),
                        float(g["C"]), {int(k): float(v) for k, v in g["class_weight"].items()},
                        float(g["tau"]))
    return TwoStageModel(ScalerParams.from_dict(header["scaler"]), gate, regs["regressor"],
                         regs["baseline"], header["config"], int(header["seed"]))
