"""One-sided upper confidence bounds on a Bernoulli failure rate.

Two constructions are provided:

* the exact Clopper-Pearson bound, found by bisecting the binomial CDF
  ``R -> Pr(Binomial(m, R) <= w)`` for the rate at which it falls to ``delta``;
* the Hoeffding bound ``r_hat + sqrt(log(1/delta) / (2 m))``, clamped to 1.

The binomial probability mass is evaluated in log space with Loader's
saddle-point expansion (Stirling remainders plus the ``bd0`` deviance), which
keeps ~1e-14 relative accuracy for counts into the millions where a plain
``lgamma`` difference loses digits to cancellation.

:func:`beta_inv_upper` computes the same Clopper-Pearson quantity a second way,
through the regularized incomplete beta function, and exists to cross-check
:func:`cp_upper`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .model import BoundMethod

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200

_LN_2PI = math.log(2.0 * math.pi)
_HALF_LN_2PI = 0.5 * _LN_2PI

# Stirling remainder log(n!) - log(sqrt(2 pi n) (n/e)^n) for n = 0..15.
_SFERR_TABLE = np.array(
    [0.0]
    + [math.lgamma(n + 1.0) - (n + 0.5) * math.log(n) + n - _HALF_LN_2PI for n in range(1, 16)]
)
_S0, _S1, _S2, _S3, _S4 = 1.0 / 12, 1.0 / 360, 1.0 / 1260, 1.0 / 1680, 1.0 / 1188


def _stirlerr(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    small = n <= 15
    out[small] = _SFERR_TABLE[n[small].astype(int)]
    big = ~small
    if np.any(big):
        x = n[big]
        nn = x * x
        r = np.where(
            x > 500,
            (_S0 - _S1 / nn) / x,
            np.where(
                x > 80,
                (_S0 - (_S1 - _S2 / nn) / nn) / x,
                np.where(
                    x > 35,
                    (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / x,
                    (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / x,
                ),
            ),
        )
        out[big] = r
    return out


def _bd0(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Deviance term ``x log(x/mu) + mu - x`` without cancellation near x == mu."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    x, mu = np.broadcast_arrays(x, mu)
    out = np.empty(x.shape)
    close = np.abs(x - mu) < 0.1 * (x + mu)
    far = ~close
    if np.any(far):
        xf, mf = x[far], mu[far]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[far] = np.where(xf == 0, mf, xf * np.log(xf / mf) + mf - xf)
    if np.any(close):
        xc, mc = x[close], mu[close]
        v = (xc - mc) / (xc + mc)
        s = (xc - mc) * v
        ej = 2.0 * xc * v
        v2 = v * v
        # |v| < 1/21, so the series converges to double precision in < 20 terms.
        for j in range(1, 40):
            ej = ej * v2
            s_next = s + ej / (2 * j + 1)
            if np.array_equal(s_next, s):
                break
            s = s_next
        out[close] = s
    return out


def binomial_log_pmf(k, m, rate: float) -> np.ndarray:
    """log Pr(Binomial(m, rate) == k), vectorized over ``k`` and ``m``."""
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    k, m = np.broadcast_arrays(k, m)
    p = np.broadcast_to(np.asarray(rate, dtype=float), k.shape)
    q = 1.0 - p
    out = np.full(k.shape, -np.inf)

    zero_p = p == 0.0
    out[zero_p & (k == 0)] = 0.0
    one_p = q == 0.0
    out[one_p & (k == m)] = 0.0
    inner = ~(zero_p | one_p)

    lo = inner & (k == 0)
    if np.any(lo):
        mm, pp, qq = m[lo], p[lo], q[lo]
        out[lo] = np.where(pp < 0.1, -_bd0(mm, mm * qq) - mm * pp, mm * np.log(qq))
    hi = inner & (k == m) & (k > 0)
    if np.any(hi):
        mm, pp, qq = m[hi], p[hi], q[hi]
        out[hi] = np.where(qq < 0.1, -_bd0(mm, mm * pp) - mm * qq, mm * np.log(pp))
    mid = inner & (k > 0) & (k < m)
    if np.any(mid):
        kk, mm, pp, qq = k[mid], m[mid], p[mid], q[mid]
        lc = (
            _stirlerr(mm) - _stirlerr(kk) - _stirlerr(mm - kk)
            - _bd0(kk, mm * pp) - _bd0(mm - kk, mm * qq)
        )
        lf = _LN_2PI + np.log(kk) + np.log1p(-kk / mm)
        out[mid] = lc - 0.5 * lf
    return out


def _check_counts(w: int, m: int) -> None:
    if m < 1:
        raise ValueError(f"need m >= 1 observations, got m={m}")
    if not 0 <= w <= m:
        raise ValueError(f"need 0 <= w <= m, got w={w}, m={m}")


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def binomial_log_cdf(w: int, m: int, rate: float) -> float:
    """log Pr(Binomial(m, rate) <= w), summed exactly over all ``w + 1`` terms.

    The terms are combined as ``max + log(fsum(exp(term - max)))`` so the
    result is accurate even when every individual term underflows.
    """
    _check_counts(w, m)
    if not 0.0 <= rate <= 1.0 or math.isnan(rate):
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if w == m or rate == 0.0:
        return 0.0
    if rate == 1.0:
        return -math.inf
    terms = binomial_log_pmf(np.arange(w + 1), m, rate)
    top = float(terms.max())
    if top == -math.inf:
        return -math.inf
    return top + math.log(math.fsum(np.exp(terms - top)))


def _stirlerr1(n: float) -> float:
    if n <= 15:
        return float(_SFERR_TABLE[int(n)])
    nn = n * n
    if n > 500:
        return (_S0 - _S1 / nn) / n
    if n > 80:
        return (_S0 - (_S1 - _S2 / nn) / nn) / n
    if n > 35:
        return (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / n
    return (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / n


def _bd01(x: float, mu: float) -> float:
    if abs(x - mu) >= 0.1 * (x + mu):
        return mu if x == 0 else x * math.log(x / mu) + mu - x
    v = (x - mu) / (x + mu)
    s = (x - mu) * v
    ej = 2.0 * x * v
    v2 = v * v
    for j in range(1, 40):
        ej *= v2
        s_next = s + ej / (2 * j + 1)
        if s_next == s:
            break
        s = s_next
    return s


def _log_pmf1(k: int, m: int, p: float) -> float:
    """Scalar saddle-point log pmf for ``0 < p < 1``."""
    q = 1.0 - p
    if k == 0:
        return -_bd01(m, m * q) - m * p if p < 0.1 else m * math.log(q)
    if k == m:
        return -_bd01(m, m * p) - m * q if q < 0.1 else m * math.log(p)
    lc = _stirlerr1(m) - _stirlerr1(k) - _stirlerr1(m - k) - _bd01(k, m * p) - _bd01(m - k, m * q)
    return lc - 0.5 * (_LN_2PI + math.log(k) + math.log1p(-k / m))


_SCALAR_WINDOW = 4000


def _log_cdf_windowed(w: int, m: int, rate: float) -> float:
    """Windowed CDF used inside the bisection; same scheme as :func:`log_cdf_many`."""
    if w >= m or rate <= 0.0:
        return 0.0
    if rate >= 1.0:
        return -math.inf
    sigma = math.sqrt(m * rate * (1.0 - rate))
    mode = math.floor((m + 1) * rate)
    reach = math.ceil(_WINDOW_SIGMAS * sigma + _WINDOW_PAD)
    k_hi = min(w, mode + reach)
    k_lo = max(0, min(w, mode) - reach)
    if k_hi - k_lo > _SCALAR_WINDOW:
        return float(log_cdf_many(np.array([w]), np.array([m]), rate)[0])
    anchor = _log_pmf1(k_hi, m, rate)
    log_odds = math.log1p(-rate) - math.log(rate)
    rel = [0.0]
    acc = 0.0
    for k in range(k_hi, k_lo, -1):
        acc += math.log(k / (m - k + 1)) + log_odds
        rel.append(acc)
    top = max(rel)
    return anchor + top + math.log(math.fsum(math.exp(r - top) for r in rel))


def cp_upper(w: int, m: int, delta: float) -> float:
    """One-sided Clopper-Pearson upper bound at confidence ``1 - delta``.

    Bisects ``[w/m, 1]`` for the largest rate whose binomial CDF at ``w`` is
    still at least ``delta``. The upper end of the final bracket is returned,
    so the bound never undershoots by more than the float grid.
    """
    _check_counts(w, m)
    _check_delta(delta)
    if w == m:
        return 1.0
    log_delta = math.log(delta)
    lo, hi = w / m, 1.0
    for _ in range(BISECT_MAX_ITER):
        if hi - lo <= BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        if _log_cdf_windowed(w, m, mid) >= log_delta:
            lo = mid
        else:
            hi = mid
    return hi


def beta_inv_upper(w: int, m: int, delta: float) -> float:
    """(1 - delta)-quantile of Beta(w + 1, m - w), by bisection on ``betainc``."""
    _check_counts(w, m)
    _check_delta(delta)
    if w == m:
        return 1.0
    a, b = w + 1.0, float(m - w)
    target = 1.0 - delta
    lo, hi = 0.0, 1.0
    for _ in range(BISECT_MAX_ITER):
        if hi - lo <= BISECT_TOL * 1e-2:
            break
        mid = 0.5 * (lo + hi)
        if special.betainc(a, b, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def hoeffding_upper(r_hat: float, m: int, delta: float) -> float:
    if m < 1:
        raise ValueError(f"need m >= 1 observations, got m={m}")
    _check_delta(delta)
    if not 0.0 <= r_hat <= 1.0:
        raise ValueError(f"r_hat must lie in [0, 1], got {r_hat}")
    return min(1.0, r_hat + math.sqrt(math.log(1.0 / delta) / (2.0 * m)))


def upper_bound(w: int, m: int, delta: float, method: BoundMethod | str = BoundMethod.CP_EXACT) -> float:
    """Dispatch to the bound named by ``method`` with ``r_hat = w / m``."""
    method = BoundMethod.parse(method)
    if method is BoundMethod.CP_EXACT:
        return cp_upper(w, m, delta)
    _check_counts(w, m)
    return hoeffding_upper(w / m, m, delta)


# -- batch evaluation --------------------------------------------------------

_WINDOW_SIGMAS = 15.0
_WINDOW_PAD = 50.0
_BATCH_CELLS = 2_000_000


def log_cdf_many(w: np.ndarray, m: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """Vectorized ``binomial_log_cdf`` for many ``(w, m, rate)`` triples.

    Each sum is restricted to ``k`` within 15 standard deviations (+50) of the
    mode; the omitted mass is below 1e-40 of the retained mass. Only the top
    term of each window goes through the saddle-point formula, the rest follow
    from the ratio ``pmf(k-1)/pmf(k) = k q / ((m-k+1) p)``.
    """
    w = np.asarray(w, dtype=np.int64)
    m = np.asarray(m, dtype=np.int64)
    rate = np.broadcast_to(np.asarray(rate, dtype=float), w.shape)
    out = np.zeros(w.shape, dtype=float)
    live = (w < m) & (rate > 0.0)
    out[live & (rate >= 1.0)] = -np.inf
    live &= rate < 1.0
    idx = np.flatnonzero(live)
    if idx.size == 0:
        return out

    wl, ml, rl = w[idx], m[idx], rate[idx]
    sigma = np.sqrt(ml * rl * (1.0 - rl))
    mode = np.floor((ml + 1) * rl).astype(np.int64)
    reach = np.ceil(_WINDOW_SIGMAS * sigma + _WINDOW_PAD).astype(np.int64)
    k_lo = np.clip(np.minimum(wl, mode) - reach, 0, None)
    k_hi = np.minimum(wl, mode + reach)
    steps = k_hi - k_lo
    anchor = binomial_log_pmf(k_hi, ml, rl)
    log_odds = np.log1p(-rl) - np.log(rl)

    # rows sorted by width so each chunk pads to a similar size
    order = np.argsort(steps, kind="stable")
    rows = max(1, _BATCH_CELLS // (int(steps.max()) + 1))
    res = np.empty(idx.size)
    for start in range(0, order.size, rows):
        sel = order[start:start + rows]
        width = int(steps[sel].max())
        if width == 0:
            res[sel] = anchor[sel]
            continue
        j = np.arange(width)[None, :]
        k = k_hi[sel, None] - j
        valid = k > k_lo[sel, None]
        kc = np.where(valid, k, 1).astype(float)
        step = np.log(kc) - np.log(ml[sel, None] - kc + 1.0) + log_odds[sel, None]
        step = np.where(valid, step, -np.inf)
        rel = np.cumsum(step, axis=1)
        rel = np.where(valid, rel, -np.inf)
        # rel holds log pmf(k-1) - log pmf(k_hi); the anchor term itself is rel = 0
        top = np.maximum(rel.max(axis=1), 0.0)
        with np.errstate(under="ignore"):
            s = np.exp(-top) + np.exp(rel - top[:, None]).sum(axis=1)
        res[sel] = anchor[sel] + top + np.log(s)
    out[idx] = res
    return out


def cp_upper_many(w: np.ndarray, m: np.ndarray, delta: float) -> np.ndarray:
    """:func:`cp_upper` over arrays of counts with a shared ``delta``.

    All entries are bisected in lockstep on ``[w/m, 1]``.
    """
    _check_delta(delta)
    w = np.asarray(w, dtype=np.int64)
    m = np.asarray(m, dtype=np.int64)
    if np.any(m < 1) or np.any(w < 0) or np.any(w > m):
        raise ValueError("need m >= 1 and 0 <= w <= m for every entry")
    log_delta = math.log(delta)
    lo = w / m
    hi = np.ones(w.shape)
    done = w == m
    for _ in range(BISECT_MAX_ITER):
        act = np.flatnonzero(~done & (hi - lo > BISECT_TOL))
        if act.size == 0:
            break
        mid = 0.5 * (lo[act] + hi[act])
        ok = log_cdf_many(w[act], m[act], mid) >= log_delta
        lo[act] = np.where(ok, mid, lo[act])
        hi[act] = np.where(ok, hi[act], mid)
    return np.where(done, 1.0, hi)


def hoeffding_upper_many(w: np.ndarray, m: np.ndarray, delta: float) -> np.ndarray:
    _check_delta(delta)
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    return np.minimum(1.0, w / m + np.sqrt(math.log(1.0 / delta) / (2.0 * m)))


def upper_bound_many(w, m, delta: float, method: BoundMethod | str) -> np.ndarray:
    method = BoundMethod.parse(method)
    if method is BoundMethod.CP_EXACT:
        return cp_upper_many(w, m, delta)
    return hoeffding_upper_many(w, m, delta)
