"""Fit zero-mean normal scale mixtures to the standard logistic density.

Minimizes KL(logistic || mixture) over mixture weights and log standard
deviations on a fine quadrature grid, then prints constants for embedding
in crates/core/src/augment.rs.
"""
import sys

import numpy as np
from scipy import optimize, special, stats

GRID = np.linspace(-35.0, 35.0, 7001)
STEP = GRID[1] - GRID[0]
LOGISTIC_LOGPDF = -GRID - 2.0 * np.log1p(np.exp(-GRID))
LOGISTIC_PDF = np.exp(LOGISTIC_LOGPDF)


def unpack(params, h):
    logits = np.concatenate([params[: h - 1], [0.0]])
    weights = special.softmax(logits)
    sds = np.exp(params[h - 1 :])
    return weights, sds


def kl(params, h):
    weights, sds = unpack(params, h)
    comp = stats.norm.logpdf(GRID[:, None], scale=sds[None, :]) + np.log(weights)[None, :]
    log_mix = special.logsumexp(comp, axis=1)
    return np.sum(LOGISTIC_PDF * (LOGISTIC_LOGPDF - log_mix)) * STEP


def fit(h, restarts=6, seed=1):
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        x0 = np.concatenate([rng.normal(size=h - 1), np.sort(rng.uniform(-0.5, 1.5, size=h))])
        res = optimize.minimize(kl, x0, args=(h,), method="Nelder-Mead",
                                options={"maxiter": 6000, "maxfev": 6000, "xatol": 1e-9, "fatol": 1e-13})
        res = optimize.minimize(kl, res.x, args=(h,), method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    weights, sds = unpack(best.x, h)
    order = np.argsort(sds)
    return weights[order], sds[order], best.fun


def cdf_sup(weights, sds):
    x = np.linspace(-10.0, 10.0, 20001)
    mix = np.sum(weights[None, :] * stats.norm.cdf(x[:, None] / sds[None, :]), axis=1)
    return np.max(np.abs(mix - special.expit(x)))


if __name__ == "__main__":
    for h in [int(a) for a in sys.argv[1:]] or [3, 6]:
        w, s, div = fit(h)
        w = w / w.sum()
        print(f"H={h} KL={div:.3e} cdf_sup={cdf_sup(w, s):.3e} var={np.sum(w * s**2):.6f}")
        print("  weights:", ", ".join(f"{v:.17e}" for v in w))
        print("  sds:    ", ", ".join(f"{v:.17e}" for v in s))
