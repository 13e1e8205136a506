"""Command-line driver: fit, generate, run, compare.

Everything a command writes goes under ``--out``::

    out/gh_fit.json            fitted GH approximation (fit)
    out/data/                  y.csv, truth.csv, dataset.json (generate)
    out/chains/<kind>_<j>.csv  one record file per chain, plus .meta.json (run)
    out/report/                MPSRF traces, PM estimates, summary, figures (compare)

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .diagnostics import (
    DegenerateChainsError,
    convergence_iteration,
    mpsrf_trace,
    posterior_mean,
    write_estimates_csv,
    write_trace_csv,
)
from .distributions import (
    DEFAULT_FIT_SAMPLES,
    DEFAULT_FIT_SEED,
    FitError,
    FittedGhApprox,
    GhParams,
    default_fit_path,
    fit_gh_to_truncated_normal,
)
from .model import Hyperparams, NotPositiveDefinite, Observation, read_vector_csv
from .samplers import Chain, SamplerConfig, initial_state, run_chain
from .simulation import Scenario, generate_scenario, read_truth, reconstruction_metrics, write_dataset

logger = logging.getLogger("bghdecon")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
SAMPLERS = ("bgh", "btg")
BUILTIN_FIT = "builtin"


class UsageError(Exception):
    pass


class MissingFitError(UsageError):
    pass


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One comparison experiment.

    ``batch`` defaults to iterations // 20 and ``burn_in`` (for the PM
    estimates) to half the chain. ``fit`` is a path to a fitted GH file, or
    ``"builtin"`` for the fit shipped with the package; when unset the file
    ``gh_fit.json`` in the output directory is used.
    """

    scenario: Scenario = field(default_factory=Scenario)
    sampler: str = "both"
    chains: int = 4
    iterations: int = 2000
    batch: int | None = None
    threshold: float = 1.2
    seed: int = 0
    out: str = "experiment"
    thin: int = 1
    burn_in: int | None = None
    fixed_noise: bool = True
    sample_scale: bool = True
    sample_bern_prob: bool = True
    sample_amp_var: bool = True
    init_bern_prob: float = 0.1
    init_ir_scale: float = 5.25
    workers: int = 1
    fit: str | None = None

    def __post_init__(self):
        if self.sampler not in SAMPLERS + ("both",):
            raise UsageError(f"--sampler must be bgh, btg or both, got {self.sampler!r}")
        if self.chains < 1 or self.iterations < 2:
            raise UsageError("need at least one chain and two iterations")
        if self.thin < 1:
            raise UsageError("--thin must be >= 1")
        if self.batch is not None and self.batch < 2:
            raise UsageError("--batch must be >= 2")
        if not self.threshold > 1.0:
            raise UsageError("--threshold must exceed 1")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")

    @property
    def kinds(self) -> tuple:
        return SAMPLERS if self.sampler == "both" else (self.sampler,)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def records(self) -> int:
        return (self.iterations + self.thin - 1) // self.thin

    @property
    def batch_size(self) -> int:
        return self.batch if self.batch is not None else max(2, self.records // 20)

    @property
    def pm_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else self.records // 2

    def fit_path(self) -> Path:
        if self.fit == BUILTIN_FIT:
            return default_fit_path()
        return Path(self.fit) if self.fit else self.out_dir / "gh_fit.json"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" in d:
            sc = d["scenario"]
            d["scenario"] = Scenario.from_dict(sc) if isinstance(sc, dict) else Scenario.load(sc)
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------- pipeline pieces


def load_fit(cfg: ExperimentConfig) -> GhParams:
    path = cfg.fit_path()
    if not path.exists():
        raise MissingFitError(
            f"no fitted GH approximation at {path}; run `bghdecon fit --out {cfg.out}` first "
            f"(or pass --fit {BUILTIN_FIT} to use the packaged fit)"
        )
    return FittedGhApprox.load(path).nu_N


def dataset(cfg: ExperimentConfig) -> tuple[Observation, object]:
    """The experiment's data: read from out/data when present, else regenerated."""
    data = cfg.out_dir / "data"
    sc = cfg.scenario
    if (data / "y.csv").exists():
        y = read_vector_csv(data / "y.csv")
        obs = Observation.parametric(y, sc.s_true, sc.ir_length)
        truth = read_truth(data / "truth.csv", obs.m) if (data / "truth.csv").exists() else None
        return obs, truth
    return generate_scenario(sc)


def initial_hyperparams(cfg: ExperimentConfig, obs: Observation) -> Hyperparams:
    """Starting point shared by every chain.

    The amplitude variance is matched to the data energy assuming a
    fraction ``init_bern_prob`` of active sites; an unknown noise variance
    starts at a tenth of the mean square of y.
    """
    sc = cfg.scenario
    noise_var = sc.noise_var if cfg.fixed_noise else obs.yy / (10.0 * obs.n)
    if not noise_var > 0:
        raise UsageError("a fixed noise variance must be positive")
    lam0 = cfg.init_bern_prob
    h2 = float(np.sum(obs.H[:, obs.m // 2] ** 2))
    amp_var = max(obs.yy - obs.n * noise_var, obs.n * noise_var) / (lam0 * obs.m * h2)
    s0 = cfg.init_ir_scale if cfg.sample_scale else sc.s_true
    return Hyperparams(lam0, noise_var, amp_var, s0)


def sampler_config(cfg: ExperimentConfig, obs: Observation, chain_index: int) -> SamplerConfig:
    return SamplerConfig(
        iterations=cfg.iterations,
        initial=initial_hyperparams(cfg, obs),
        seed=cfg.seed + chain_index,
        thin=cfg.thin,
        sample_bern_prob=cfg.sample_bern_prob,
        sample_amp_var=cfg.sample_amp_var,
        sample_noise_var=not cfg.fixed_noise,
        sample_ir_scale=cfg.sample_scale,
    )


def run_one_chain(cfg: ExperimentConfig, obs: Observation, kind: str, j: int, nu_N: GhParams | None) -> Chain:
    """Chain ``j``: the first starts empty, the others from random supports
    (each site on with probability 1/2) so the starts are over-dispersed."""
    scfg = sampler_config(cfg, obs, j)
    rng = np.random.default_rng(scfg.seed)
    init = initial_state(obs.m, rng, 0.0 if j == 0 else 0.5, kind=kind, nu_N=nu_N, hp=scfg.initial)
    t0 = time.perf_counter()
    ch = run_chain(scfg, obs, init, kind, nu_N if kind == "bgh" else None, rng=rng)
    ch.meta["chain_index"] = j
    ch.meta["seconds"] = time.perf_counter() - t0
    return ch


def _chain_job(args):
    return run_one_chain(*args)


def run_chains(cfg: ExperimentConfig, obs: Observation, kind: str, nu_N: GhParams | None) -> list[Chain]:
    jobs = [(cfg, obs, kind, j, nu_N) for j in range(cfg.chains)]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.chains)) as pool:
            return list(pool.map(_chain_job, jobs))
    return [_chain_job(a) for a in jobs]


def chain_path(cfg: ExperimentConfig, kind: str, j: int) -> Path:
    return cfg.out_dir / "chains" / f"{kind}_{j}.csv"


def write_chains(cfg: ExperimentConfig, kind: str, chains: list[Chain]) -> list[Path]:
    d = cfg.out_dir / "chains"
    d.mkdir(parents=True, exist_ok=True)
    return [ch.write(chain_path(cfg, kind, j)) for j, ch in enumerate(chains)]


def read_chains(cfg: ExperimentConfig, kind: str) -> list[Chain] | None:
    paths = [chain_path(cfg, kind, j) for j in range(cfg.chains)]
    if not all(p.exists() for p in paths):
        return None
    chains = [Chain.read(p) for p in paths]
    if any(len(c) != cfg.records for c in chains):
        return None
    return chains


@dataclass
class SamplerSummary:
    kind: str
    trace: list
    converged_at: int | None
    final_r: float
    pm_x: np.ndarray
    inclusion: np.ndarray
    metrics: dict | None
    acceptance: list
    seconds: float

    def to_dict(self) -> dict:
        return {
            "converged_at": self.converged_at if self.converged_at is not None else "not converged",
            "final_mpsrf": self.final_r,
            "metrics": self.metrics,
            "acceptance_rates": self.acceptance,
            "seconds": self.seconds,
        }


def summarize(cfg: ExperimentConfig, kind: str, chains: list[Chain], truth=None) -> SamplerSummary:
    """MPSRF trace over the indicator chains, convergence point and PM estimate.

    Trace lengths are reported in iterations (records times ``thin``).
    """
    q = np.stack([c.q for c in chains]).astype(float)
    if len(chains) >= 2:
        trace = [(n * cfg.thin, r) for n, r in mpsrf_trace(q, cfg.batch_size)]
    else:
        trace = []
    conv = convergence_iteration(trace, cfg.threshold) if trace else None
    burn = cfg.pm_burn_in
    x_all = np.concatenate([c.x[burn:] for c in chains])
    q_all = np.concatenate([c.q[burn:] for c in chains])
    pm, inc = posterior_mean(x_all, 0, q_all)
    metrics = None
    if truth is not None:
        metrics = asdict(reconstruction_metrics(pm, truth, tolerance_shift=1, inclusion=inc))
    return SamplerSummary(
        kind, trace, conv, trace[-1][1] if trace else math.nan, pm, inc, metrics,
        [c.meta.get("acceptance_rates") for c in chains],
        float(sum(c.meta.get("seconds", 0.0) for c in chains)),
    )


def convergence_ratio(summaries: dict):
    a, b = summaries.get("btg"), summaries.get("bgh")
    if a is None or b is None or a.converged_at is None or b.converged_at is None:
        return None
    return a.converged_at / b.converged_at


# ---------------------------------------------------------------- commands


def cmd_fit(cfg: ExperimentConfig, samples: int = DEFAULT_FIT_SAMPLES, fit_seed: int = DEFAULT_FIT_SEED) -> Path:
    path = cfg.fit_path() if cfg.fit not in (None, BUILTIN_FIT) else cfg.out_dir / "gh_fit.json"
    # fail on an unusable destination before spending minutes on the fit
    path.parent.mkdir(parents=True, exist_ok=True)
    fit = fit_gh_to_truncated_normal(samples, seed=fit_seed)
    fit.save(path)
    print(f"fitted {fit.nu_N}")
    print(f"KL(N+(0,1) || GH) = {fit.fit_kl_estimate:.5f} nats")
    print(f"wrote {path}")
    return path


def cmd_generate(cfg: ExperimentConfig) -> dict:
    obs, truth = generate_scenario(cfg.scenario)
    meta = write_dataset(cfg.out_dir / "data", obs, truth, cfg.scenario)
    snr = meta["achieved_snr_db"]
    print(f"wrote {cfg.out_dir / 'data'} (N={obs.n}, M={obs.m}, {int(truth.q.sum())} spikes, SNR {snr} dB)")
    return meta


def cmd_run(cfg: ExperimentConfig) -> dict:
    # resolve every input before anything is written
    nu_N = load_fit(cfg) if "bgh" in cfg.kinds else None
    obs, _ = dataset(cfg)
    written = {}
    for kind in cfg.kinds:
        chains = run_chains(cfg, obs, kind, nu_N)
        written[kind] = [str(p) for p in write_chains(cfg, kind, chains)]
        logger.info("%s: %d chains written", kind, len(chains))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "run.json").write_text(json.dumps({"config": cfg.to_dict(), "chains": written}, indent=2) + "\n")
    for kind, paths in written.items():
        print(f"{kind}: {len(paths)} chains in {cfg.out_dir / 'chains'}")
    return written


def cmd_compare(cfg: ExperimentConfig) -> dict:
    """Diagnostics and estimates for every selected sampler; runs missing chains."""
    from .plotting import plot_estimates, plot_mpsrf_traces

    if cfg.chains < 2:
        raise UsageError("compare needs at least two chains for the MPSRF")
    cached = {kind: read_chains(cfg, kind) for kind in cfg.kinds}
    nu_N = load_fit(cfg) if cached.get("bgh", []) is None else None
    obs, truth = dataset(cfg)
    rep = cfg.out_dir / "report"
    summaries = {}
    for kind in cfg.kinds:
        chains = cached[kind]
        if chains is None:
            chains = run_chains(cfg, obs, kind, nu_N)
            write_chains(cfg, kind, chains)
        summaries[kind] = summarize(cfg, kind, chains, truth)
    rep.mkdir(parents=True, exist_ok=True)
    for kind, s in summaries.items():
        write_trace_csv(rep / f"{kind}_mpsrf.csv", s.trace)
        write_estimates_csv(rep / f"{kind}_estimates.csv", s.pm_x, s.inclusion,
                            truth.x if truth is not None else None)
    ratio = convergence_ratio(summaries)
    report = {
        "config": cfg.to_dict(),
        "samplers": {k: s.to_dict() for k, s in summaries.items()},
        "convergence_ratio_btg_over_bgh": ratio,
    }
    (rep / "summary.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    (rep / "summary.txt").write_text(format_report(summaries, ratio, cfg.threshold))
    plot_mpsrf_traces({k: s.trace for k, s in summaries.items()}, rep / "mpsrf.png", cfg.threshold,
                      {k: s.converged_at for k, s in summaries.items()})
    plot_estimates({k: s.pm_x for k, s in summaries.items()}, rep / "estimates.png",
                   truth.x if truth is not None else None)
    print(format_report(summaries, ratio, cfg.threshold), end="")
    return report


def format_report(summaries: dict, ratio, threshold: float) -> str:
    lines = []
    for kind, s in summaries.items():
        if s.converged_at is not None:
            status = f"converged at {s.converged_at} iterations (MPSRF < {threshold:g} from there on)"
        else:
            status = "not converged"
        lines.append(f"{kind.upper()}: {status}, final R {s.final_r:.3f}")
        if s.metrics:
            m = s.metrics
            lines.append(
                f"  PM estimate: RMSE {m['rmse']:.4g}, precision {m['precision']:.2f}, "
                f"recall {m['recall']:.2f}, {m['n_detected']} detected / {m['n_true']} true"
            )
    if ratio is not None:
        lines.append(f"convergence ratio BTG/BGH: {ratio:.2f}")
    elif len(summaries) == 2:
        lines.append("convergence ratio BTG/BGH: undefined (a sampler did not converge)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="base seed (chain j uses seed + j)")
    common.add_argument("-v", "--verbose", action="store_true")

    runner = argparse.ArgumentParser(add_help=False)
    runner.add_argument("--sampler", choices=("bgh", "btg", "both"))
    runner.add_argument("--chains", type=int, help="number of chains J")
    runner.add_argument("--iterations", type=int, help="iterations per chain I")
    runner.add_argument("--batch", type=int, help="MPSRF batch size b (default I/20)")
    runner.add_argument("--threshold", type=float, help="MPSRF convergence threshold")
    runner.add_argument("--thin", type=int)
    runner.add_argument("--burn-in", type=int, dest="burn_in", help="records dropped before the PM estimate")
    runner.add_argument("--fixed-noise", action=argparse.BooleanOptionalAction, default=None,
                        help="treat the noise variance as known (default)")
    runner.add_argument("--sample-scale", action=argparse.BooleanOptionalAction, default=None,
                        help="sample the impulse-response scale by MH (default)")
    runner.add_argument("--workers", type=int, help="parallel worker processes")
    runner.add_argument("--fit", help=f"fitted GH file, or '{BUILTIN_FIT}' for the packaged fit")

    p = _Parser(prog="bghdecon", description="Spike-train deconvolution experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    f = sub.add_parser("fit", parents=[common], help="fit and store the GH approximation of N+(0,1)")
    f.add_argument("--samples", type=int, default=DEFAULT_FIT_SAMPLES)
    f.add_argument("--fit", help="destination file (default OUT/gh_fit.json)")
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset and its ground truth")
    sub.add_parser("run", parents=[common, runner], help="run J chains of the selected sampler(s)")
    sub.add_parser("compare", parents=[common, runner], help="MPSRF traces, PM estimates and a summary report")
    return p


_FLAG_FIELDS = ("out", "seed", "sampler", "chains", "iterations", "batch", "threshold", "thin", "burn_in",
                "fixed_noise", "sample_scale", "workers", "fit")


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {k: getattr(args, k) for k in _FLAG_FIELDS if getattr(args, k, None) is not None}
    if "seed" in over and args.command == "generate":
        over["scenario"] = replace(cfg.scenario, seed=over.pop("seed"))
    return replace(cfg, **over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "fit":
            cmd_fit(cfg, samples=args.samples, fit_seed=args.seed if args.seed is not None else DEFAULT_FIT_SEED)
        elif args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "run":
            cmd_run(cfg)
        else:
            cmd_compare(cfg)
    except UsageError as e:
        print(f"bghdecon: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, NotPositiveDefinite, DegenerateChainsError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"bghdecon: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError) as e:
        print(f"bghdecon: invalid setting: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"bghdecon: I/O failure: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
