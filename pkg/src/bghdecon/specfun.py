"""Log-domain modified Bessel function of the second kind.

``scipy.special.kve`` is accurate wherever its result is representable; it
overflows for large orders at small arguments (e.g. K_50(1e-8) ~ 1e460).
Those entries are recovered with the upward three-term recurrence run on the
ratio r_v = K_{v+1}(x) / K_v(x), which has only positive terms and is the
stable direction for K.
"""

import numpy as np
from scipy import special

__all__ = ["log_bessel_k", "log_bessel_k_ratio"]

_TINY_ORDER = 1e-150


def _check(order, x):
    order = np.asarray(order, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(order)) and np.all(np.isfinite(x))):
        raise ValueError("log_bessel_k: non-finite input")
    if np.any(x <= 0):
        raise ValueError("log_bessel_k: argument must be strictly positive")
    return order, x


def _abs_order(order):
    # K is even and flat in the order at zero, so tiny orders are exactly K_0
    # in double precision; kve misbehaves for subnormal orders.
    v = np.abs(order)
    return np.where(v < _TINY_ORDER, 0.0, v)


def _recurrence(v, x):
    """Return (ln K_v(x), ln K_{v+1}(x)) for v >= 0 via the ratio recurrence."""
    v, x = np.broadcast_arrays(v, x)
    n = np.floor(v)
    v0 = v - n
    k0 = special.kve(v0, x)
    k1 = special.kve(v0 + 1.0, x)
    log_k = np.log(k0) - x
    ratio = k1 / k0
    nmax = int(n.max()) if n.size else 0
    for i in range(nmax):
        step = i < n
        log_k = np.where(step, log_k + np.log(ratio), log_k)
        ratio = np.where(step, 1.0 / ratio + 2.0 * (v0 + i + 1.0) / x, ratio)
    return log_k, log_k + np.log(ratio)


def log_bessel_k(order, x):
    """Natural log of K_order(x), elementwise.

    Parameters
    ----------
    order : float or array_like
        Any finite real order; K is even in the order.
    x : float or array_like
        Strictly positive argument.

    Returns
    -------
    float or ndarray
        ln K_order(x), broadcast over the inputs.
    """
    order, x = _check(order, x)
    v = _abs_order(order)
    with np.errstate(over="ignore", divide="ignore"):
        k = special.kve(v, x)
        out = np.log(k) - x
    bad = ~np.isfinite(out)
    if np.any(bad):
        vb, xb = np.broadcast_arrays(v, x)
        out = np.array(np.broadcast_to(out, vb.shape))
        out[bad] = _recurrence(vb[bad], xb[bad])[0]
    return out[()] if out.ndim == 0 else out


def log_bessel_k_ratio(order, x):
    """ln(K_{order+1}(x) / K_order(x)), computed without forming either log.

    Where both scaled Bessel values are representable the ratio is taken
    directly; otherwise it falls back to the difference of recurrence logs.
    """
    order, x = _check(order, x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        num = special.kve(_abs_order(order + 1.0), x)
        den = special.kve(_abs_order(order), x)
        out = np.log(num / den)
    bad = ~np.isfinite(out)
    if np.any(bad):
        ob, xb = np.broadcast_arrays(order, x)
        out = np.array(np.broadcast_to(out, ob.shape))
        out[bad] = log_bessel_k(ob[bad] + 1.0, xb[bad]) - log_bessel_k(ob[bad], xb[bad])
    return out[()] if out.ndim == 0 else out
