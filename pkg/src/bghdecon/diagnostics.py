"""Brooks-Gelman multivariate convergence diagnostics and posterior summaries.

Chains are stored as an array of shape (J, I, d): J chains, I iterations,
d monitored coordinates.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import linalg


class DegenerateChainsError(ValueError):
    """Too few chains/iterations, or no coordinate with within-chain variance."""


def as_chain_store(chains) -> np.ndarray:
    """Stack a sequence of (I, d) arrays into (J, I, d) float."""
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("chains must have shape (J, I, d)")
    return arr


def intra_chain_cov(chains) -> np.ndarray:
    """Mean within-chain covariance, normalised by J (I - 1)."""
    x = as_chain_store(chains)
    J, I, _ = x.shape
    if I < 2:
        raise DegenerateChainsError("need at least two iterations per chain")
    dev = x - x.mean(axis=1, keepdims=True)
    return np.einsum("jid,jie->de", dev, dev) / (J * (I - 1))


def inter_chain_cov(chains) -> np.ndarray:
    """Covariance of the chain means, normalised by J - 1."""
    x = as_chain_store(chains)
    J = x.shape[0]
    if J < 2:
        raise DegenerateChainsError("need at least two chains")
    means = x.mean(axis=1)
    dev = means - means.mean(axis=0)
    return dev.T @ dev / (J - 1)


def mpsrf(chains, ridge: float = 1e-12) -> float:
    """Multivariate potential scale reduction factor.

    R = (I-1)/I + (J+1)/J * lambda_max, with lambda_max the largest
    generalised eigenvalue of (V_inter, V_intra).

    Coordinates that are constant over every sample of every chain carry no
    information and are dropped. A coordinate that is constant inside each
    chain but differs between chains makes R infinite.
    """
    x = as_chain_store(chains)
    J, I, _ = x.shape
    w = intra_chain_cov(x)
    b = inter_chain_cov(x)
    within = np.diag(w)
    between = np.diag(b)
    keep = within > 0
    if np.any(~keep & (between > 0)):
        return math.inf
    if not np.any(keep):
        raise DegenerateChainsError("no coordinate varies within the chains")
    w = w[np.ix_(keep, keep)]
    b = b[np.ix_(keep, keep)]
    w = w + ridge * np.mean(np.diag(w)) * np.eye(w.shape[0])
    try:
        lam = linalg.eigh(b, w, eigvals_only=True)[-1]
    except linalg.LinAlgError:
        # singular within-chain covariance among retained coordinates
        return math.inf
    return (I - 1) / I + (J + 1) / J * max(lam, 0.0)


def mpsrf_trace(chains, batch: int) -> list[tuple[int, float]]:
    """R on the second halves of the first k*batch samples, k = 1, 2, ...

    Returns (samples_used, R) pairs where samples_used = k * batch.
    """
    if batch < 2:
        raise ValueError("batch must be >= 2")
    x = as_chain_store(chains)
    I = x.shape[1]
    out = []
    for k in range(1, I // batch + 1):
        n = k * batch
        seg = x[:, n // 2 : n]
        try:
            r = mpsrf(seg)
        except DegenerateChainsError:
            r = math.nan
        out.append((n, r))
    return out


def convergence_iteration(trace, threshold: float = 1.2):
    """Smallest trace length after which R stays below ``threshold``, or None."""
    if not threshold > 1:
        raise ValueError("threshold must exceed 1")
    first = None
    for n, r in trace:
        if r < threshold:
            if first is None:
                first = n
        else:
            first = None
    return first


def posterior_mean(x_chain, burn_in: int, q_chain=None):
    """Mean of x over iterations after ``burn_in``, and the mean of q.

    Returns ``(pm_x, inclusion)``; inclusion is derived from x != 0 when no
    q chain is given.
    """
    x_chain = np.asarray(x_chain, dtype=float)
    if not 0 <= burn_in < x_chain.shape[0]:
        raise ValueError("burn_in must be smaller than the chain length")
    tail = x_chain[burn_in:]
    qs = (tail != 0) if q_chain is None else np.asarray(q_chain)[burn_in:]
    return tail.mean(axis=0), qs.mean(axis=0)


def write_trace_csv(path, trace) -> None:
    with Path(path).open("w") as fh:
        fh.write("samples_used,R,log10_R\n")
        for n, r in trace:
            r = float(r)
            lr = math.log10(r) if r > 0 and math.isfinite(r) else (math.inf if r == math.inf else math.nan)
            fh.write(f"{int(n)},{r!r},{lr!r}\n")


def read_trace_csv(path) -> list[tuple[int, float]]:
    lines = Path(path).read_text().splitlines()[1:]
    return [(int(a), float(b)) for a, b, _ in (ln.split(",") for ln in lines)]


def write_estimates_csv(path, pm_x, inclusion, true_x=None) -> None:
    with Path(path).open("w") as fh:
        fh.write("site,pm_x,inclusion_freq" + (",true_x" if true_x is not None else "") + "\n")
        for k in range(len(pm_x)):
            row = f"{k},{float(pm_x[k])!r},{float(inclusion[k])!r}"
            if true_x is not None:
                row += f",{float(true_x[k])!r}"
            fh.write(row + "\n")
