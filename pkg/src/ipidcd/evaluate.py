"""Threshold calibration and Monte Carlo run-length evaluation.

Replications are simulated in lock-step: every replication owns its own
random stream (derived from ``(seed, replication index)``), and the detector
state for all of them lives in one array.  A replication's stopping time is
therefore identical to running a scalar detector on
``sample(model, change, n, seed=replication_seed(seed, i))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .detect import AllBatchDetector, SingleBatchDetector
from .model import (
    BatchPartition,
    ChangeSpec,
    DistributionFamily,
    IpidModel,
    ModelError,
    draw,
    kl_divergence,
)

__all__ = [
    "CalibrationError",
    "CalibrationConfig",
    "RunLengthEstimate",
    "EfficiencyReport",
    "replication_seed",
    "simulate_stopping_times",
    "calibrate_threshold",
    "calibrate_threshold_mc",
    "estimate_mtfa",
    "estimate_delay",
    "kappa",
    "mean_information",
    "theoretical_delay_bound",
    "efficiency_report",
]


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    """False-alarm budget ``beta`` and how to turn it into a threshold.

    ``method`` is ``"log_beta"`` (threshold ``ln beta``) or ``"mc"`` (bisection
    on a simulated mean time to false alarm).
    """

    beta: float
    method: str = "log_beta"
    reps: int = 1000
    horizon: int | None = None
    tolerance: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 1:
            raise ModelError(f"false-alarm budget must exceed 1, got {self.beta!r}")
        if self.method not in ("log_beta", "mc"):
            raise ModelError(f"unknown calibration method {self.method!r}")
        if self.method == "mc":
            if self.reps < 100:
                raise ModelError("Monte Carlo calibration needs reps >= 100")
            if self.horizon is not None and self.horizon < 10 * self.beta:
                raise ModelError("Monte Carlo calibration needs horizon >= 10 * beta")
            if not self.tolerance > 0:
                raise ModelError("tolerance must be positive")

    @property
    def mc_horizon(self) -> int:
        return int(self.horizon if self.horizon is not None else math.ceil(10 * self.beta))


@dataclass
class RunLengthEstimate:
    """Mean stopping time; censored runs count at the horizon value."""

    mean: float
    stderr: float
    replications: int
    censored: int
    horizon: int

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.replications if self.replications else 0.0

    @classmethod
    def from_samples(cls, values: np.ndarray, censored: int, horizon: int) -> "RunLengthEstimate":
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n == 0:
            return cls(math.nan, math.nan, 0, censored, horizon)
        sd = values.std(ddof=1) if n > 1 else 0.0
        return cls(float(values.mean()), float(sd / math.sqrt(n)), n, int(censored), int(horizon))

    def to_dict(self) -> dict:
        return asdict(self)


def replication_seed(seed: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(i)])


def _vector_bank(detector, n):
    if not isinstance(detector, (SingleBatchDetector, AllBatchDetector)):
        raise TypeError("detector template must be a SingleBatchDetector or AllBatchDetector")
    return detector.vector_bank(n)


def simulate_stopping_times(detector, threshold: float, change: ChangeSpec, reps: int, horizon: int,
                            seed: int, gammas=None, chunk: int = 512) -> tuple:
    """Stopping times of ``reps`` independent streams, one fresh detector each.

    Streams start at global time 1.  ``gammas`` optionally gives a change point
    per replication (overriding ``change.gamma``).  Returns ``(tau, censored)``
    where censored runs report ``tau == horizon``.
    """
    model = detector.model
    change.validate(model)
    if reps < 1 or horizon < 1:
        raise ModelError("reps and horizon must be positive")
    fam = model.family
    rngs = [np.random.default_rng(replication_seed(seed, i)) for i in range(reps)]
    bank = _vector_bank(detector, reps)
    tau = np.full(reps, horizon, dtype=np.int64)
    censored = np.ones(reps, dtype=bool)
    rows = np.arange(reps)  # replication id of each live bank row
    k = 0
    while k < horizon and len(rows):
        n = min(chunk, horizon - k)
        ks = np.arange(k + 1, k + n + 1)
        if gammas is None:
            params = change.params_at(model, ks)
            data = np.stack([draw(fam, rngs[i], params) for i in rows])
        else:
            data = np.stack([
                draw(fam, rngs[i], ChangeSpec(int(gammas[i]), change.mode, change.batch, change.lambdas)
                     .params_at(model, ks))
                for i in rows])
        alive = np.ones(len(rows), dtype=bool)
        for t in range(n):
            stat = bank.update(k + t + 1, data[:, t])
            hit = alive & (stat > threshold)
            if hit.any():
                ids = rows[hit]
                tau[ids] = k + t + 1
                censored[ids] = False
                alive &= ~hit
                if not alive.any():
                    break
        k += n
        if not alive.all():
            keep = np.flatnonzero(alive)
            bank.select(keep)
            rows = rows[keep]
    return tau, censored


def calibrate_threshold(config: CalibrationConfig | float) -> float:
    """Threshold ``ln beta`` for a false-alarm budget ``beta``."""
    if not isinstance(config, CalibrationConfig):
        config = CalibrationConfig(float(config))
    return math.log(config.beta)


def estimate_mtfa(detector, threshold: float, reps: int, horizon: int, seed: int = 0) -> RunLengthEstimate:
    """Mean time to false alarm under the no-change model."""
    tau, cens = simulate_stopping_times(detector, threshold, ChangeSpec.none(), reps, horizon, seed)
    return RunLengthEstimate.from_samples(tau, int(cens.sum()), horizon)


def estimate_delay(detector, change: ChangeSpec, threshold: float, reps: int, seed: int = 0,
                   horizon: int = 100_000, sampled_gamma: bool = False) -> RunLengthEstimate:
    """Mean detection delay ``tau - gamma + 1`` (equal to ``tau`` for ``gamma = 1``).

    With ``sampled_gamma`` each replication draws its change point uniformly
    over one period; runs that alarm before their change point are dropped and
    the estimate averages over the remaining ones.
    """
    model = detector.model
    if change.mode == "none":
        raise ModelError("delay needs a change with finite gamma")
    change.validate(model)
    if sampled_gamma:
        # stream id 2**32 - 1 is reserved for change points; replications use 0..reps-1
        g = np.random.default_rng([int(seed), 2**32 - 1]).integers(1, model.period + 1, size=reps)
        tau, cens = simulate_stopping_times(detector, threshold, change, reps, horizon, seed, gammas=g)
    else:
        g = np.full(reps, int(change.gamma))
        tau, cens = simulate_stopping_times(detector, threshold, change, reps, horizon, seed)
    keep = tau >= g
    return RunLengthEstimate.from_samples((tau - g + 1)[keep], int((cens & keep).sum()), horizon)


def calibrate_threshold_mc(detector, config: CalibrationConfig, max_expand: int = 8) -> float:
    """Threshold whose simulated MTFA lands in ``[beta, (1 + tolerance) beta]``.

    Every evaluation reuses the same replication seeds, so the estimate is a
    monotone step function of the threshold and bisection is well defined.
    Returns the upper bracket end, which always satisfies ``MTFA >= beta``.
    """
    beta = config.beta
    horizon = config.mc_horizon

    def mtfa(a):
        return estimate_mtfa(detector, a, config.reps, horizon, config.seed).mean

    lo, hi = math.log(beta) / 2, 4 * math.log(beta)
    f_lo, f_hi = mtfa(lo), mtfa(hi)
    for _ in range(max_expand):
        if f_lo < beta:
            break
        lo = lo - abs(lo) - 1.0
        f_lo = mtfa(lo)
    for _ in range(max_expand):
        if f_hi >= beta:
            break
        hi *= 2
        f_hi = mtfa(hi)
    if not (f_lo < beta <= f_hi):
        raise CalibrationError(
            f"bracket [{lo:.4g}, {hi:.4g}] gives MTFA [{f_lo:.4g}, {f_hi:.4g}], which does not "
            f"straddle beta={beta:.4g}; raise the horizon or the number of replications")
    while hi - lo > 1e-6 * max(1.0, abs(hi)):
        if f_hi <= (1 + config.tolerance) * beta:
            break
        mid = 0.5 * (lo + hi)
        f_mid = mtfa(mid)
        if f_mid >= beta:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return hi


def kappa(partition: BatchPartition, e: int) -> float:
    """Delay inflation ``1 + sum_{f != e} |B_f| / |B_e|`` for a change confined to batch ``e``."""
    sizes = partition.sizes
    if not 1 <= e <= len(sizes):
        raise ModelError(f"batch {e} outside 1..{len(sizes)}")
    own = sizes[e - 1]
    return 1.0 + float(sizes.sum() - own) / float(own)


def mean_information(model: IpidModel, change: ChangeSpec) -> float:
    """Per-sample KL rate ``(1/T) sum_e |B_e| I(lambda_e, theta_e)`` of a change."""
    change.validate(model)
    post = change.post_change_params(model)
    sizes = model.partition.sizes
    total = sum(float(s) * kl_divergence(model.family, lam, t)
                for s, lam, t in zip(sizes, post, model.baseline))
    return total / model.period


def theoretical_delay_bound(family: DistributionFamily, partition: BatchPartition, e: int,
                            lam: float, theta: float, beta: float) -> float:
    """First-order delay bound ``ln(beta) * kappa / I(lam, theta)`` for a single-batch change."""
    info = kl_divergence(family, lam, theta)
    if info == 0:
        raise ModelError("post-change value equals the baseline; the bound is infinite")
    return math.log(beta) * kappa(partition, e) / info


@dataclass
class EfficiencyReport:
    betas: list
    thresholds: list
    mtfa: list
    delay: list
    slope_fit: float
    theory_slope: float
    kappa: float
    I: float
    I_bar: float
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "betas": list(self.betas),
            "thresholds": list(self.thresholds),
            "mtfa": [m.to_dict() for m in self.mtfa],
            "delay": [d.to_dict() for d in self.delay],
            "slope_fit": self.slope_fit,
            "theory_slope": self.theory_slope,
            "kappa": self.kappa,
            "I": self.I,
            "I_bar": self.I_bar,
            "pass": self.passed,
            "notes": list(self.notes),
        }


def efficiency_report(detector, change: ChangeSpec, betas, reps: int, seed: int = 0,
                      mtfa_reps: int | None = None, horizon_factor: float = 10.0,
                      delay_horizon: int = 100_000, slack: float = 1.5,
                      max_censored: float = 0.2) -> EfficiencyReport:
    """MTFA and delay at ``A = ln beta`` over several budgets, with a slope fit.

    PASS requires every MTFA point estimate to reach its budget, censoring at
    most ``max_censored`` and a fitted delay slope (versus ``ln beta``) at most
    ``slack`` times the first-order slope ``1 / I_bar``.
    """
    model = detector.model
    change.validate(model)
    if change.mode == "none":
        raise ModelError("efficiency report needs a change")
    betas = [float(b) for b in betas]
    mtfa_reps = mtfa_reps or reps
    i_bar = mean_information(model, change)
    if change.mode == "single":
        kap = kappa(model.partition, change.batch)
        info = kl_divergence(model.family, change.lambdas[0], model.theta(change.batch))
    else:
        kap = 1.0
        info = i_bar
    thresholds, mtfa, delay, notes = [], [], [], []
    for j, beta in enumerate(betas):
        a = calibrate_threshold(beta)
        thresholds.append(a)
        horizon = int(math.ceil(horizon_factor * beta))
        mtfa.append(estimate_mtfa(detector, a, mtfa_reps, horizon, seed + 2 * j))
        delay.append(estimate_delay(detector, change, a, reps, seed + 2 * j + 1, horizon=delay_horizon))
    logs = np.log(betas)
    if len(betas) >= 2:
        slope = float(np.polyfit(logs, [d.mean for d in delay], 1)[0])
    else:
        slope = math.nan
    theory = 1.0 / i_bar
    ok = True
    for beta, m in zip(betas, mtfa):
        if m.mean < beta:
            ok = False
            notes.append(f"MTFA {m.mean:.4g} below budget {beta:.4g}")
        if m.censored_fraction > max_censored:
            ok = False
            notes.append(f"censoring {m.censored_fraction:.1%} at beta={beta:.4g} exceeds {max_censored:.0%}")
    if not slope <= slack * theory:
        ok = False
        notes.append(f"delay slope {slope:.4g} exceeds {slack} x theory slope {theory:.4g}")
    return EfficiencyReport(betas, thresholds, mtfa, delay, slope, theory, kap, info, i_bar, ok, notes)
