"""Independent reference implementations used as test oracles.

These are deliberately naive: explicit loops over the textbook definitions,
with no shared code paths with the package.
"""
import math

import numpy as np


def moving_average(y, k):
    T = len(y)
    half = k // 2
    out = []
    for t in range(T):
        vals = [y[s] for s in range(t - half, t - half + k) if 0 <= s < T and not math.isnan(y[s])]
        out.append(sum(vals) / len(vals) if vals else math.nan)
    return out


def events(y, threshold, ma_k=5, merge_gap=24):
    """Enumerate exceedance segments of the smoothed series one by one."""
    sm = moving_average(list(map(float, y)), ma_k)
    segs = []
    t = 0
    while t < len(sm):
        if sm[t] >= threshold:
            s = t
            while t + 1 < len(sm) and sm[t + 1] >= threshold:
                t += 1
            segs.append([s, t])
        t += 1
    merged = []
    for s in segs:
        if merged and s[0] - merged[-1][1] - 1 <= merge_gap:
            merged[-1][1] = s[1]
        else:
            merged.append(list(s))
    out = []
    for a, b in merged:
        best = None
        for i in range(a, b + 1):
            if math.isnan(y[i]):
                continue
            if best is None or y[i] > y[best]:
                best = i
        if best is not None:
            out.append((best, float(y[best])))
    return out


def cmase(y, yhat, threshold, delta, h):
    T = len(y)
    peaks = [t for t in range(T) if y[t] >= threshold]
    S = [t for t in range(T) if peaks and min(abs(t - p) for p in peaks) <= delta]
    if not S:
        return None
    num = sum(abs(y[t] - yhat[t]) for t in S) / len(S)
    den = sum(abs(y[t] - y[t - h]) for t in range(h, T)) / (T - h)
    return num / den


def mase(y, yhat, h):
    T = len(y)
    mae = sum(abs(a - b) for a, b in zip(y, yhat)) / T
    den = sum(abs(y[t] - y[t - h]) for t in range(h, T)) / (T - h)
    return mae / den


def morans_i(x, W):
    n = len(x)
    xbar = sum(x) / n
    Wr = [[W[i][j] / sum(W[i]) if sum(W[i]) > 0 else 0.0 for j in range(n)] for i in range(n)]
    S0 = sum(sum(r) for r in Wr)
    num = 0.0
    for i in range(n):
        for j in range(n):
            num += Wr[i][j] * (x[i] - xbar) * (x[j] - xbar)
    den = sum((v - xbar) ** 2 for v in x)
    return n / S0 * num / den


def spherical_gamma(h, c0, c, a):
    if h == 0:
        return 0.0
    if h >= a:
        return c0 + c
    r = h / a
    return c0 + c * (1.5 * r - 0.5 * r ** 3)


def ordinary_kriging(coords, values, target, c0, c, a):
    """Ordinary kriging in the semivariogram form of the system."""
    n = len(values)
    A = np.zeros((n + 1, n + 1))
    b = np.zeros(n + 1)
    for i in range(n):
        for j in range(n):
            A[i, j] = spherical_gamma(float(np.hypot(*(coords[i] - coords[j]))), c0, c, a)
        A[i, n] = A[n, i] = 1.0
        b[i] = spherical_gamma(float(np.hypot(*(coords[i] - target))), c0, c, a)
    b[n] = 1.0
    sol = np.linalg.solve(A, b)
    lam = sol[:n]
    return float(lam @ values), lam


def idw(values, dists, power):
    for z, d in zip(values, dists):
        if d == 0:
            return z
    num = sum(z * d ** -power for z, d in zip(values, dists))
    den = sum(d ** -power for d in dists)
    return num / den


def rolling(series, W, stat):
    out = []
    for t in range(len(series)):
        if t < W - 1:
            out.append(math.nan)
            continue
        win = series[t - W + 1:t + 1]
        if any(math.isnan(v) for v in win):
            out.append(math.nan)
        elif stat == "sum":
            out.append(sum(win))
        elif stat == "mean":
            out.append(sum(win) / W)
        else:
            out.append(max(win))
    return out


def lstm_step(W, U, b, w_out, b_out, x, h0, c0):
    """One cell step for a single example, gate by gate."""
    H = len(w_out)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h = [0.0] * H
    for k in range(H):
        pre = [b[g * H + k] + sum(W[g * H + k][j] * x[j] for j in range(len(x)))
               + sum(U[g * H + k][j] * h0[j] for j in range(H)) for g in range(4)]
        i, f, g, o = sig(pre[0]), sig(pre[1]), math.tanh(pre[2]), sig(pre[3])
        c = f * c0[k] + i * g
        h[k] = o * math.tanh(c)
    return sum(w_out[k] * h[k] for k in range(H)) + b_out[0]
