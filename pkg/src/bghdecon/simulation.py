"""Synthetic spike-train scenarios and reconstruction metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import LatentState, Observation, write_vector_csv


@dataclass(frozen=True)
class Scenario:
    """Settings of a synthetic deconvolution problem.

    With ``snr_db`` set, the amplitudes are rescaled so that
    10 log10(|Hz|^2 / (N noise_var)) equals it exactly; otherwise they keep
    the N+(0, amp_var) draw.
    """

    n_obs: int = 84
    ir_length: int = 21
    s_true: float = 3.0
    n_spikes: int = 5
    amp_var: float = 1.0
    snr_db: float | None = 10.0
    noise_var: float = 5.5e-7
    seed: int = 0

    def __post_init__(self):
        if self.ir_length % 2 == 0 or self.ir_length < 1:
            raise ValueError("ir_length must be odd")
        if self.signal_length < 1:
            raise ValueError("n_obs must be at least ir_length")
        if self.n_spikes > self.signal_length:
            raise ValueError(f"cannot place {self.n_spikes} spikes on {self.signal_length} sites")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def signal_length(self) -> int:
        return self.n_obs - self.ir_length + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def snr_db(clean, noise_var: float) -> float:
    clean = np.asarray(clean, dtype=float)
    return 10.0 * math.log10(float(clean @ clean) / (clean.size * noise_var))


def generate_scenario(sc: Scenario, rng=None) -> tuple[Observation, LatentState]:
    """Observation and ground truth for ``sc``; ``rng`` defaults to ``sc.seed``."""
    rng = np.random.default_rng(sc.seed) if rng is None else rng
    m = sc.signal_length
    obs0 = Observation.parametric(np.zeros(sc.n_obs), sc.s_true, sc.ir_length)
    sites = np.sort(rng.choice(m, size=sc.n_spikes, replace=False))
    amps = np.abs(rng.standard_normal(sc.n_spikes)) * math.sqrt(sc.amp_var)
    # a zero half-normal draw has probability zero, but keep amplitudes strictly positive
    amps = np.maximum(amps, np.finfo(float).tiny)
    x = np.zeros(m)
    x[sites] = amps
    clean = obs0.H @ x
    if sc.snr_db is not None and sc.noise_var > 0 and sc.n_spikes > 0:
        target = sc.n_obs * sc.noise_var * 10.0 ** (sc.snr_db / 10.0)
        scale = math.sqrt(target / float(clean @ clean))
        x *= scale
        clean = obs0.H @ x
    noise = rng.standard_normal(sc.n_obs) * math.sqrt(sc.noise_var)
    y = clean + noise
    truth = LatentState(x > 0, x, np.full(m, np.nan))
    return Observation(y, obs0.H, sc.s_true, sc.ir_length), truth


def write_dataset(out_dir, obs: Observation, truth: LatentState, sc: Scenario) -> dict:
    """Write y.csv, truth.csv (site, amplitude) and dataset.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_vector_csv(out / "y.csv", obs.y)
    with (out / "truth.csv").open("w") as fh:
        fh.write("site,amplitude\n")
        for k in np.flatnonzero(truth.q):
            fh.write(f"{k},{float(truth.x[k])!r}\n")
    clean = obs.H @ truth.x
    meta = {
        "scenario": sc.to_dict(),
        "signal_length": sc.signal_length,
        "achieved_snr_db": snr_db(clean, sc.noise_var) if sc.noise_var > 0 else None,
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def read_truth(path, m: int) -> LatentState:
    x = np.zeros(m)
    lines = Path(path).read_text().splitlines()[1:]
    for ln in lines:
        k, a = ln.split(",")
        x[int(k)] = float(a)
    return LatentState(x > 0, x, np.full(m, np.nan))


@dataclass(frozen=True)
class ReconstructionMetrics:
    rmse: float
    precision: float
    recall: float
    n_detected: int
    n_true: int


def _match(detected, true_sites, tol: int) -> int:
    """Greedy one-to-one matching of detections to true sites within +-tol."""
    free = list(true_sites)
    hits = 0
    for d in sorted(detected, key=lambda s: min((abs(s - t) for t in free), default=tol + 1)):
        best = min(free, key=lambda t: abs(t - d), default=None)
        if best is not None and abs(best - d) <= tol:
            free.remove(best)
            hits += 1
    return hits


def reconstruction_metrics(estimate, truth: LatentState, tolerance_shift: int = 1, inclusion=None) -> ReconstructionMetrics:
    """RMSE of the amplitude estimate and support precision/recall.

    Detected sites are those with inclusion frequency above 0.5, or the
    nonzero entries of ``estimate`` when no frequencies are given.
    """
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != truth.x.shape:
        raise ValueError("estimate and truth must have equal lengths")
    rmse = float(np.sqrt(np.mean((estimate - truth.x) ** 2)))
    detected = np.flatnonzero(np.asarray(inclusion) > 0.5) if inclusion is not None else np.flatnonzero(estimate != 0)
    true_sites = np.flatnonzero(truth.q)
    hits = _match(detected.tolist(), true_sites.tolist(), tolerance_shift)
    precision = hits / detected.size if detected.size else (1.0 if true_sites.size == 0 else 0.0)
    recall = hits / true_sites.size if true_sites.size else 1.0
    return ReconstructionMetrics(rmse, precision, recall, int(detected.size), int(true_sites.size))
