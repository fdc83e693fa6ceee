"""Independent reference implementations used to cross-check the package.

These are deliberately written from the definitions, not by calling into the
package, so each check has two genuinely different routes to the same number.
"""

from __future__ import annotations

import numpy as np


def sigmoid(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))


def mean_loglik(b0, theta, Z, y):
    eta = np.clip(b0 + Z @ theta, -35.0, 35.0)
    return float(np.mean(y * eta - np.log1p(np.exp(eta))))


def numeric_gradient(f, x, h=1e-6):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2 * h)
    return grad


def numeric_hessian(f, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            xpp = x.copy(); xpp[i] += h; xpp[j] += h
            xpm = x.copy(); xpm[i] += h; xpm[j] -= h
            xmp = x.copy(); xmp[i] -= h; xmp[j] += h
            xmm = x.copy(); xmm[i] -= h; xmm[j] -= h
            H[i, j] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4 * h * h)
    return H


def gradient_ascent_mle(Z, y, *, lr0=1.0, max_iter=200_000, tol=1e-10):
    """Plain backtracking gradient ascent on the mean log-likelihood.

    Z must already include any intercept column.  Returns the parameter vector.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = Z.shape
    beta = np.zeros(d)

    def loglik(b):
        eta = np.clip(Z @ b, -35.0, 35.0)
        return float(np.mean(y * eta - np.log1p(np.exp(eta))))

    current = loglik(beta)
    for _ in range(max_iter):
        grad = Z.T @ (y - sigmoid(Z @ beta)) / n
        if np.max(np.abs(grad)) < tol:
            break
        lr = lr0
        while lr > 1e-12:
            cand = beta + lr * grad
            value = loglik(cand)
            if value > current - 1e-15:
                break
            lr *= 0.5
        beta = cand
        current = value
    return beta


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_grad_lasso_path(Z, y, lambdas, *, max_iter=200_000, tol=1e-11):
    """Accelerated proximal gradient on
        minimize -(1/n) sum[y*eta - log(1+e^eta)] + lam * ||theta||_1
    with an unpenalized intercept, warm-started along the penalty sequence.

    Z is the standardized penalized design (no intercept column).  Returns
    arrays (intercepts, thetas) with one row per penalty value.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])
    # Lipschitz constant of the smooth part: lambda_max(A'A) / (4n)
    step = 1.0 / (np.linalg.eigvalsh(A.T @ A).max() / (4.0 * n))

    def objective(x, lam):
        eta = np.clip(A @ x, -35.0, 35.0)
        smooth = -float(np.mean(y * eta - np.log1p(np.exp(eta))))
        return smooth + lam * float(np.sum(np.abs(x[1:])))

    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    x = np.zeros(d + 1)
    x[0] = np.log(ybar / (1 - ybar))
    intercepts = np.zeros(len(lambdas))
    thetas = np.zeros((len(lambdas), d))
    for li, lam in enumerate(lambdas):
        momentum = x.copy()
        t_acc = 1.0
        f_prev = objective(x, lam)
        for _ in range(max_iter):
            grad = -A.T @ (y - sigmoid(A @ momentum)) / n
            nxt = momentum - step * grad
            nxt[1:] = soft_threshold(nxt[1:], step * lam)
            f_next = objective(nxt, lam)
            if f_next > f_prev:  # restart momentum when acceleration overshoots
                momentum = x.copy()
                t_acc = 1.0
                grad = -A.T @ (y - sigmoid(A @ momentum)) / n
                nxt = momentum - step * grad
                nxt[1:] = soft_threshold(nxt[1:], step * lam)
                f_next = objective(nxt, lam)
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
            momentum = nxt + ((t_acc - 1.0) / t_new) * (nxt - x)
            change = np.max(np.abs(nxt - x))
            x = nxt
            t_acc = t_new
            f_prev = min(f_prev, f_next)
            if change < tol:
                break
        intercepts[li] = x[0]
        thetas[li] = x[1:]
    return intercepts, thetas


def kendall_naive(pred_means, obs_uplifts):
    """Double-loop pairwise-sign correlation over bins."""
    pred_means = np.asarray(pred_means, dtype=float)
    obs_uplifts = np.asarray(obs_uplifts, dtype=float)
    j = pred_means.size
    total = 0.0
    for a in range(j):
        for b in range(a + 1, j):
            total += np.sign(pred_means[a] - pred_means[b]) * np.sign(
                obs_uplifts[a] - obs_uplifts[b]
            )
    return 2.0 * total / (j * (j - 1))


def midpoint_riemann_q(grid, values, refine=10):
    """Midpoint Riemann sum of g(phi) - phi*g(1) with linear interpolation,
    each panel split into `refine` equal parts; exact for piecewise-linear g."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    overall = values[-1]
    total = 0.0
    for a in range(grid.size - 1):
        x0, x1 = grid[a], grid[a + 1]
        sub = x0 + (x1 - x0) * (np.arange(refine) + 0.5) / refine
        g_mid = np.interp(sub, grid, values)
        q_mid = g_mid - sub * overall
        total += np.sum(q_mid) * (x1 - x0) / refine
    return float(total)


def hand_incremental_uplift(y, t, selected):
    """Direct transcription of the incremental-uplift definition for a chosen set."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    sel = np.asarray(selected, dtype=int)
    yt = float(np.sum(y[sel] * t[sel]))
    yc = float(np.sum(y[sel] * (1 - t[sel])))
    nt = float(np.sum(t[sel]))
    nc = float(np.sum(1 - t[sel]))
    return yt - yc * (nt / nc)
