"""Periodic count-stream model: families, batch partitions, samplers, fitting.

A stream ``Y_1, Y_2, ...`` is independent with a parameter that repeats with
period ``T``.  Within a cycle the phases ``1..T`` are grouped into contiguous
batches that share one parameter, so a model is fully described by the family,
the partition and one baseline value per batch.

Time, phases and batch labels are 1-based throughout the public API.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "ModelError",
    "FitError",
    "DistributionFamily",
    "BatchPartition",
    "IpidModel",
    "ChangeSpec",
    "ObservationSequence",
    "phase_of",
    "batch_of",
    "log_pmf",
    "llr",
    "llr_coefficients",
    "kl_divergence",
    "sample",
    "mle_fit",
]

POISSON = "poisson"
GAUSSIAN = "gaussian"


class ModelError(ValueError):
    """Invalid parameter, observation or model configuration."""


class FitError(ModelError):
    """Baseline estimation failed for a batch."""


@dataclass(frozen=True)
class DistributionFamily:
    """Parametric family ``p(y; theta)`` indexed by its mean.

    ``kind`` is ``"poisson"`` or ``"gaussian"``; the Gaussian family has a known
    standard deviation ``fixed_scale``.
    """

    kind: str = POISSON
    fixed_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (POISSON, GAUSSIAN):
            raise ModelError(f"unknown family {self.kind!r}")
        if self.kind == GAUSSIAN and not (self.fixed_scale > 0 and math.isfinite(self.fixed_scale)):
            raise ModelError("gaussian family needs fixed_scale > 0")

    @classmethod
    def poisson(cls) -> "DistributionFamily":
        return cls(POISSON)

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "DistributionFamily":
        return cls(GAUSSIAN, float(sigma))

    @property
    def is_poisson(self) -> bool:
        return self.kind == POISSON

    def valid_param(self, theta) -> bool:
        theta = float(theta)
        if not math.isfinite(theta):
            return False
        return theta > 0 if self.is_poisson else True

    def check_param(self, theta) -> float:
        if not self.valid_param(theta):
            raise ModelError(f"invalid {self.kind} parameter {theta!r}")
        return float(theta)

    def check_observation(self, y) -> float:
        y = float(y)
        if not math.isfinite(y):
            raise ModelError(f"non-finite observation {y!r}")
        if self.is_poisson and (y < 0 or y != math.floor(y)):
            raise ModelError(f"poisson observation must be a nonnegative integer, got {y!r}")
        return y


@dataclass(frozen=True)
class BatchPartition:
    """Split of the phases ``1..period`` into contiguous batches.

    ``boundaries`` are the right ends ``N_1 < ... < N_E`` with ``N_E == period``.
    """

    period: int
    boundaries: tuple

    def __post_init__(self):
        bounds = tuple(int(b) for b in self.boundaries)
        object.__setattr__(self, "boundaries", bounds)
        if int(self.period) != self.period or self.period < 1:
            raise ModelError(f"period must be a positive integer, got {self.period!r}")
        object.__setattr__(self, "period", int(self.period))
        if not bounds:
            raise ModelError("partition needs at least one batch")
        if bounds[-1] != self.period:
            raise ModelError(f"last boundary {bounds[-1]} must equal the period {self.period}")
        prev = 0
        for b in bounds:
            if b <= prev:
                raise ModelError(f"boundaries must be strictly increasing and positive: {bounds}")
            prev = b

    @classmethod
    def single(cls, period: int) -> "BatchPartition":
        return cls(period, (period,))

    @property
    def n_batches(self) -> int:
        return len(self.boundaries)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(np.concatenate([[0], self.boundaries]))

    def batch_slices(self) -> list:
        """Phase ranges ``(first, last)`` of each batch, inclusive."""
        starts = (0,) + self.boundaries[:-1]
        return [(s + 1, e) for s, e in zip(starts, self.boundaries)]

    def phase_batches(self) -> np.ndarray:
        """0-based batch index for each phase ``1..period`` (array of length T)."""
        return np.repeat(np.arange(self.n_batches), self.sizes)

    def batches_at(self, k) -> np.ndarray:
        """0-based batch indices for an array of global times ``k >= 1``."""
        k = np.asarray(k, dtype=np.int64)
        return self.phase_batches()[(k - 1) % self.period]


def phase_of(k: int, period: int) -> int:
    """Position of global time ``k`` inside its cycle, in ``1..period``."""
    if k < 1 or period < 1:
        raise ModelError("phase_of needs k >= 1 and period >= 1")
    return (k - 1) % period + 1


def batch_of(k: int, partition: BatchPartition) -> int:
    """1-based batch label of global time ``k``."""
    phase = phase_of(k, partition.period)
    return int(np.searchsorted(partition.boundaries, phase, side="left")) + 1


def log_pmf(family: DistributionFamily, theta, y) -> float:
    theta = family.check_param(theta)
    y = family.check_observation(y)
    if family.is_poisson:
        return y * math.log(theta) - theta - float(gammaln(y + 1.0))
    s = family.fixed_scale
    return -((y - theta) ** 2) / (2.0 * s * s) - math.log(s * math.sqrt(2.0 * math.pi))


def llr_coefficients(family: DistributionFamily, theta, lam) -> tuple:
    """``(a, c)`` with ``llr(theta, lam, y) == a * y - c``.

    Both families are exponential families in the mean, so the log-likelihood
    ratio is affine in the observation.  Detectors run on these coefficients.
    """
    theta = family.check_param(theta)
    lam = family.check_param(lam)
    if family.is_poisson:
        return math.log(lam / theta), lam - theta
    var = family.fixed_scale ** 2
    return (lam - theta) / var, (lam * lam - theta * theta) / (2.0 * var)


def llr(family: DistributionFamily, theta, lam, y) -> float:
    """``log p(y; lam) - log p(y; theta)``."""
    y = family.check_observation(y)
    a, c = llr_coefficients(family, theta, lam)
    return a * y - c


def kl_divergence(family: DistributionFamily, lam, theta) -> float:
    """KL divergence of ``p(.; lam)`` from ``p(.; theta)``."""
    lam = family.check_param(lam)
    theta = family.check_param(theta)
    if lam == theta:
        return 0.0
    if family.is_poisson:
        return theta - lam + lam * math.log(lam / theta)
    return (lam - theta) ** 2 / (2.0 * family.fixed_scale ** 2)


@dataclass(frozen=True)
class IpidModel:
    """Family + partition + one baseline parameter per batch."""

    family: DistributionFamily
    partition: BatchPartition
    baseline: tuple

    def __post_init__(self):
        base = tuple(float(t) for t in self.baseline)
        object.__setattr__(self, "baseline", base)
        if len(base) != self.partition.n_batches:
            raise ModelError(
                f"baseline has {len(base)} values but the partition has {self.partition.n_batches} batches")
        for e, t in enumerate(base, start=1):
            if not self.family.valid_param(t):
                raise ModelError(f"baseline of batch {e} is not a valid {self.family.kind} parameter: {t!r}")

    @property
    def period(self) -> int:
        return self.partition.period

    @property
    def n_batches(self) -> int:
        return self.partition.n_batches

    def theta(self, e: int) -> float:
        """Baseline of 1-based batch ``e``."""
        return self.baseline[e - 1]

    def params_at(self, k) -> np.ndarray:
        """Baseline parameter at each global time in ``k``."""
        return np.asarray(self.baseline)[self.partition.batches_at(k)]


@dataclass(frozen=True)
class ChangeSpec:
    """Where and how the stream departs from baseline.

    ``mode`` is ``"none"``, ``"single"`` (one batch changes to ``lam``) or
    ``"all"`` (every batch changes, ``lambdas[e-1]`` for batch ``e``).  The
    post-change value is constant within a batch.
    """

    gamma: float = math.inf
    mode: str = "none"
    batch: int | None = None
    lambdas: tuple | None = None

    @classmethod
    def none(cls) -> "ChangeSpec":
        return cls()

    @classmethod
    def single_batch(cls, batch: int, lam: float, gamma: int = 1) -> "ChangeSpec":
        return cls(gamma=gamma, mode="single", batch=int(batch), lambdas=(float(lam),))

    @classmethod
    def all_batches(cls, lambdas: Sequence[float], gamma: int = 1) -> "ChangeSpec":
        return cls(gamma=gamma, mode="all", lambdas=tuple(float(x) for x in lambdas))

    def validate(self, model: IpidModel) -> None:
        if self.mode == "none":
            if self.gamma != math.inf:
                raise ModelError("a no-change spec must have gamma = inf")
            return
        if self.mode not in ("single", "all"):
            raise ModelError(f"unknown change mode {self.mode!r}")
        if not (self.gamma != math.inf and int(self.gamma) == self.gamma and self.gamma >= 1):
            raise ModelError(f"change point must be a positive integer, got {self.gamma!r}")
        fam = model.family
        if self.mode == "single":
            if not (1 <= (self.batch or 0) <= model.n_batches):
                raise ModelError(f"changed batch {self.batch!r} outside 1..{model.n_batches}")
            lam = self.lambdas[0]
            fam.check_param(lam)
            if lam == model.theta(self.batch):
                raise ModelError(f"post-change value equals the baseline of batch {self.batch}")
            return
        if len(self.lambdas) != model.n_batches:
            raise ModelError(f"need {model.n_batches} post-change values, got {len(self.lambdas)}")
        for e, (lam, t) in enumerate(zip(self.lambdas, model.baseline), start=1):
            fam.check_param(lam)
            if lam == t:
                raise ModelError(f"post-change value equals the baseline of batch {e}")

    def post_change_params(self, model: IpidModel) -> np.ndarray:
        """Per-batch parameter after the change (baseline where unaffected)."""
        post = np.asarray(model.baseline, dtype=float).copy()
        if self.mode == "single":
            post[self.batch - 1] = self.lambdas[0]
        elif self.mode == "all":
            post[:] = self.lambdas
        return post

    def params_at(self, model: IpidModel, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        batches = model.partition.batches_at(k)
        pre = np.asarray(model.baseline)[batches]
        if self.mode == "none":
            return pre
        return np.where(k >= self.gamma, self.post_change_params(model)[batches], pre)


@dataclass(frozen=True)
class ObservationSequence:
    """Observations with the global time of the first one."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    start_index: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ModelError("observations must be one-dimensional")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if int(self.start_index) != self.start_index or self.start_index < 1:
            raise ModelError(f"start_index must be a positive integer, got {self.start_index!r}")
        object.__setattr__(self, "start_index", int(self.start_index))

    def __len__(self):
        return len(self.values)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start_index, self.start_index + len(self.values))


def draw(family: DistributionFamily, rng: np.random.Generator, params: np.ndarray) -> np.ndarray:
    """One independent draw per entry of ``params`` (exact Poisson sampling)."""
    if family.is_poisson:
        return rng.poisson(params).astype(float)
    return rng.normal(params, family.fixed_scale)


def sample(model: IpidModel, change: ChangeSpec, n: int, seed=None, start_index: int = 1) -> ObservationSequence:
    """Draw ``n`` observations at global times ``start_index, ...``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    change.validate(model)
    if n < 0:
        raise ModelError("n must be nonnegative")
    k = np.arange(start_index, start_index + n)
    rng = np.random.default_rng(seed)
    return ObservationSequence(draw(model.family, rng, change.params_at(model, k)), start_index)


def mle_fit(family: DistributionFamily, partition: BatchPartition,
            training: ObservationSequence | Iterable[ObservationSequence]) -> tuple:
    """Per-batch maximum-likelihood baseline, pooled over all training streams.

    For both supported families the estimate is the sample mean of every
    observation whose global time falls in the batch.
    """
    if isinstance(training, ObservationSequence):
        training = [training]
    E = partition.n_batches
    sums = np.zeros(E)
    counts = np.zeros(E, dtype=np.int64)
    for seq in training:
        if len(seq) == 0:
            continue
        for y in np.unique(seq.values):
            family.check_observation(y)
        b = partition.batches_at(seq.indices)
        sums += np.bincount(b, weights=seq.values, minlength=E)
        counts += np.bincount(b, minlength=E)
    est = []
    for e in range(E):
        if counts[e] == 0:
            raise FitError(f"batch {e + 1} received no training observations")
        m = sums[e] / counts[e]
        if not family.valid_param(m):
            raise FitError(f"batch {e + 1}: estimate {m!r} is not a valid {family.kind} parameter")
        est.append(float(m))
    return tuple(est)
