"""Run configuration: an INI document with ``model``, ``grid``, ``detector``,
``scenario`` and ``io`` sections, plus optional ``modality.<name>`` sections
that override the baseline or grid of one count stream.

Example::

    [model]
    family = poisson
    period = 6598
    boundaries = 1500, 3000, 4500, 6598
    baseline = 0.1, 0.3, 0.5, 0.2

    [grid]
    multipliers = 2

    [detector]
    kind = all
    beta = 26392

    [scenario]
    day_length = 6598
    reset_policy = at-day-boundary

    [modality.vehicle]
    multipliers = 0.5

Lists are comma separated; explicit per-batch alternatives separate batches
with ``|`` (``lambdas = 4, 8 | 10 | 20 | 8``).
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .detect import DEFAULT_MAX_PRODUCT_CELLS, AllBatchDetector, PostChangeGrid, SingleBatchDetector
from .model import BatchPartition, DistributionFamily, IpidModel, ModelError

__all__ = ["ConfigError", "GridSpec", "ModalitySpec", "RunConfig", "parse_config", "load_config"]

RESET_POLICIES = ("never", "at-alarm", "at-day-boundary")
FILL_GAPS = ("none", "zero", "hold")


class ConfigError(ValueError):
    def __init__(self, field_name: str, constraint: str):
        super().__init__(f"{field_name}: {constraint}")
        self.field = field_name
        self.constraint = constraint


@dataclass(frozen=True)
class GridSpec:
    """Either multipliers of the baseline or explicit alternatives per batch."""

    multipliers: tuple | None = None
    lambdas: tuple | None = None
    epsilon: float | None = None

    def build(self, model: IpidModel) -> PostChangeGrid:
        if self.lambdas is not None:
            per = self.lambdas
            if len(per) != model.n_batches:
                raise ModelError(f"grid lists {len(per)} batches, model has {model.n_batches}")
        else:
            per = tuple(tuple(m * t for m in self.multipliers) for t in model.baseline)
        eps = self.epsilon
        if eps is None:
            eps = min(abs(lam - t) for lams, t in zip(per, model.baseline) for lam in lams)
        return PostChangeGrid.build(model, per, eps)


@dataclass(frozen=True)
class ModalitySpec:
    baseline: tuple | None = None
    baseline_fit: tuple = ()
    grid: GridSpec | None = None


@dataclass(frozen=True)
class RunConfig:
    family: DistributionFamily
    partition: BatchPartition
    grid: GridSpec
    kind: str = "all"
    threshold: float | None = None
    beta: float | None = None
    baseline: tuple | None = None
    baseline_fit: tuple = ()
    window: int | None = None
    max_cells: int = DEFAULT_MAX_PRODUCT_CELLS
    day_length: int | None = None
    reset_policy: str = "at-day-boundary"
    modalities: dict = field(default_factory=dict)
    round_counts: bool = False
    fill_gaps: str = "none"
    interval_seconds: float = 3.0

    @property
    def threshold_value(self) -> float:
        return self.threshold if self.threshold is not None else math.log(self.beta)

    def _mod(self, name) -> ModalitySpec:
        return self.modalities.get(name, ModalitySpec())

    def baseline_for(self, name):
        return self._mod(name).baseline or self.baseline

    def fit_sources(self, name) -> tuple:
        return self._mod(name).baseline_fit or self.baseline_fit

    def grid_for(self, name) -> GridSpec:
        return self._mod(name).grid or self.grid

    def model(self, baseline) -> IpidModel:
        return IpidModel(self.family, self.partition, baseline)

    def detector(self, model: IpidModel, name=None):
        grid = self.grid_for(name).build(model)
        if self.kind == "single":
            return SingleBatchDetector(model, grid, self.threshold_value)
        return AllBatchDetector(model, grid, self.threshold_value, window=self.window, max_cells=self.max_cells)

    def echo(self) -> dict:
        """Plain-data view of the configuration for reports."""
        def grid_dict(g):
            return {"multipliers": g.multipliers, "lambdas": g.lambdas, "epsilon": g.epsilon}

        return {
            "family": self.family.kind,
            "sigma": self.family.fixed_scale if not self.family.is_poisson else None,
            "period": self.partition.period,
            "boundaries": list(self.partition.boundaries),
            "kind": self.kind,
            "threshold": self.threshold_value,
            "beta": self.beta,
            "window": self.window,
            "day_length": self.day_length,
            "reset_policy": self.reset_policy,
            "grid": grid_dict(self.grid),
            "modalities": {
                k: {"baseline": v.baseline, "grid": grid_dict(v.grid) if v.grid else None}
                for k, v in sorted(self.modalities.items())
            },
        }


def _floats(text, name):
    try:
        vals = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(name, f"expected a list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(name, "empty list")
    return vals


def _ints(text, name):
    vals = _floats(text, name)
    if any(v != int(v) for v in vals):
        raise ConfigError(name, f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _number(sec, key, name, cast=float):
    raw = sec.get(key)
    if raw is None:
        return None
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(name, f"expected a number, got {raw!r}") from None
    if cast is int:
        if val != int(val):
            raise ConfigError(name, f"expected an integer, got {raw!r}")
        return int(val)
    return val


def _grid(sec, prefix) -> GridSpec | None:
    mult = sec.get("multipliers")
    lams = sec.get("lambdas")
    if mult is None and lams is None:
        return None
    if mult is not None and lams is not None:
        raise ConfigError(prefix, "give either multipliers or lambdas, not both")
    eps = _number(sec, "epsilon", f"{prefix}.epsilon")
    if eps is not None and not eps > 0:
        raise ConfigError(f"{prefix}.epsilon", "must be positive")
    if mult is not None:
        m = _floats(mult, f"{prefix}.multipliers")
        if any(x == 1.0 for x in m):
            raise ConfigError(f"{prefix}.multipliers", "a multiplier of 1 reproduces the baseline")
        return GridSpec(multipliers=m, epsilon=eps)
    per = tuple(_floats(part, f"{prefix}.lambdas") for part in lams.split("|"))
    return GridSpec(lambdas=per, epsilon=eps)


def _paths(text):
    return tuple(p.strip() for p in text.split(",") if p.strip()) if text else ()


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("document", str(exc).splitlines()[0]) from None
    if not cp.has_section("model"):
        raise ConfigError("model", "missing section")
    model = cp["model"]

    kind = model.get("family", "poisson").strip().lower()
    if kind not in ("poisson", "gaussian"):
        raise ConfigError("model.family", f"must be poisson or gaussian, got {kind!r}")
    try:
        if kind == "gaussian":
            family = DistributionFamily.gaussian(_number(model, "sigma", "model.sigma") or 1.0)
        else:
            family = DistributionFamily.poisson()
    except ModelError as exc:
        raise ConfigError("model.sigma", str(exc)) from None

    period = _number(model, "period", "model.period", int)
    if period is None:
        raise ConfigError("model.period", "required")
    bounds = _ints(model.get("boundaries", str(period)), "model.boundaries")
    try:
        partition = BatchPartition(period, bounds)
    except ModelError as exc:
        raise ConfigError("model.boundaries", str(exc)) from None

    def baseline_of(sec, prefix):
        if sec.get("baseline") is None:
            return None
        b = _floats(sec["baseline"], f"{prefix}.baseline")
        try:
            IpidModel(family, partition, b)
        except ModelError as exc:
            raise ConfigError(f"{prefix}.baseline", str(exc)) from None
        return b

    baseline = baseline_of(model, "model")
    fit = _paths(model.get("baseline_fit"))

    grid = _grid(cp["grid"], "grid") if cp.has_section("grid") else None
    if grid is None:
        raise ConfigError("grid", "needs multipliers or lambdas")

    det = cp["detector"] if cp.has_section("detector") else {}
    dkind = det.get("kind", "all").strip().lower()
    if dkind not in ("single", "all"):
        raise ConfigError("detector.kind", f"must be single or all, got {dkind!r}")
    threshold = _number(det, "threshold", "detector.threshold")
    beta = _number(det, "beta", "detector.beta")
    if (threshold is None) == (beta is None):
        raise ConfigError("detector", "give exactly one of threshold or beta")
    if beta is not None and not beta > 1:
        raise ConfigError("detector.beta", "must exceed 1")
    window = _number(det, "window", "detector.window", int)
    if window is not None and window < 1:
        raise ConfigError("detector.window", "must be a positive integer")
    max_cells = _number(det, "max_cells", "detector.max_cells", int) or DEFAULT_MAX_PRODUCT_CELLS

    scen = cp["scenario"] if cp.has_section("scenario") else {}
    day_length = _number(scen, "day_length", "scenario.day_length", int)
    if day_length is not None and day_length < 1:
        raise ConfigError("scenario.day_length", "must be a positive integer")
    policy = scen.get("reset_policy", "at-day-boundary").strip()
    if policy not in RESET_POLICIES:
        raise ConfigError("scenario.reset_policy", f"must be one of {', '.join(RESET_POLICIES)}")

    io = cp["io"] if cp.has_section("io") else None
    round_counts = io.getboolean("round_counts", False) if io is not None else False
    fill = io.get("fill_gaps", "none").strip() if io is not None else "none"
    if fill not in FILL_GAPS:
        raise ConfigError("io.fill_gaps", f"must be one of {', '.join(FILL_GAPS)}")
    interval = (_number(io, "interval_seconds", "io.interval_seconds") if io is not None else None) or 3.0
    if not interval > 0:
        raise ConfigError("io.interval_seconds", "must be positive")

    modalities = {}
    for name in cp.sections():
        if not name.startswith("modality."):
            continue
        label = name.split(".", 1)[1]
        sec = cp[name]
        modalities[label] = ModalitySpec(baseline_of(sec, name), _paths(sec.get("baseline_fit")), _grid(sec, name))

    cfg = RunConfig(family, partition, grid, dkind, threshold, beta, baseline, fit, window, max_cells,
                    day_length, policy, modalities, round_counts, fill, interval)

    # grids whose baseline is already known are checked now
    for label in [None, *modalities]:
        base = cfg.baseline_for(label)
        if base is None:
            continue
        where = "grid" if label is None or modalities[label].grid is None else f"modality.{label}"
        try:
            cfg.grid_for(label).build(cfg.model(base))
        except ModelError as exc:
            raise ConfigError(where, str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
