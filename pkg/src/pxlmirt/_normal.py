"""Standard normal tail arithmetic, vectorised (numpy) and scalar (numba)."""
import math

import numba as nb
import numpy as np
from scipy.special import log_ndtr

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)


def lnq(t):
    """log P(Z > t)."""
    return log_ndtr(-np.asarray(t, float))


def mills(t):
    """phi(t) / P(Z > t), the mean of N(0,1) truncated to [t, inf)."""
    t = np.asarray(t, float)
    with np.errstate(invalid="ignore"):
        out = np.exp(-0.5 * t * t - LOG_SQRT_2PI - lnq(t))
    return np.where(np.isneginf(t), 0.0, out)


def log_cdf_diff(a, b):
    """log(Phi(b) - Phi(a)) for a <= b, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = np.empty(a.shape)
    upper = a > 0                       # both in the right tail: use survival
    la, lb = lnq(a), lnq(b)             # log Q
    with np.errstate(divide="ignore", invalid="ignore"):
        out_u = la + np.log1p(-np.exp(lb - la))
        pa, pb = log_ndtr(a), log_ndtr(b)
        out_l = pb + np.log1p(-np.exp(pa - pb))
    out[...] = np.where(upper, out_u, out_l)
    out[a == b] = -np.inf
    return out


def cdf_diff(a, b):
    return np.exp(log_cdf_diff(a, b))


# ---------------------------------------------------------------- scalar

@nb.njit(cache=True)
def lnq_s(t):
    if t == -np.inf:
        return 0.0
    if t < 30.0:
        return math.log(0.5 * math.erfc(t / SQRT2))
    t2 = t * t
    s = 1.0
    term = 1.0
    for n in range(1, 12):
        term *= -(2.0 * n - 1.0) / t2
        s += term
    return -0.5 * t2 - math.log(t) - LOG_SQRT_2PI + math.log(s)


@nb.njit(cache=True)
def log_ndtr_s(t):
    return lnq_s(-t)


@nb.njit(cache=True)
def mills_s(t):
    if t == -np.inf:
        return 0.0
    return math.exp(-0.5 * t * t - LOG_SQRT_2PI - lnq_s(t))


_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
SQRT_2PI = math.sqrt(2.0 * math.pi)


@nb.njit(cache=True)
def ndtri_s(p):
    """Standard normal quantile: rational start plus one Halley correction."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - 0.02425:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if x < 0:
        e = 0.5 * math.erfc(-x / SQRT2) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / SQRT2)
    u = e * SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True)
def tail_draw(l, u, g):
    """N(0,1) truncated to [l, inf) from one normal ``g`` and one uniform ``u``.

    ``g`` is kept when it clears the bound; otherwise the draw is the
    inverse-CDF image of ``u``.  The mixture is exactly the truncated law:
    phi(z) (1 + Phi(l) / Q(l)) = phi(z) / Q(l) on z >= l.  Returns
    (draw, log P(Z > l)).  Past l = 37, where the tail mass underflows, a
    Rayleigh rejection step on the compiled RNG is used instead.
    """
    if l == -np.inf:
        return g, 0.0
    if l < 30.0:
        q = 0.5 * math.erfc(l / SQRT2)
        lq = math.log(q)
    else:
        lq = lnq_s(l)
        q = math.exp(lq)
    if g >= l:
        return g, lq
    if l < 37.0:
        z = -ndtri_s(q * (1.0 - u))
        return max(z, l), lq
    return trandn_lower(l), lq


@nb.njit(cache=True)
def trandn_lower(l):
    """One draw of N(0,1) truncated to [l, inf)."""
    if l > 0.66:
        # Rayleigh proposal for the far tail
        c = 0.5 * l * l
        while True:
            x = c - math.log(1.0 - np.random.random())
            u = np.random.random()
            if u * u * x <= c:
                return math.sqrt(2.0 * x)
    while True:
        z = np.random.standard_normal()
        if z >= l:
            return z
