"""Multi-day, multi-modality monitoring runs and a synthetic event-day generator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .io import ingest_csv
from .model import ChangeSpec, IpidModel, ModelError, ObservationSequence, mle_fit, sample

__all__ = ["Alarm", "ModalityTrace", "ScenarioOutput", "resolve_baseline", "run_scenario", "synthetic_days"]


@dataclass
class Alarm:
    modality: str
    day: int | None
    index: int
    statistic: float
    arg_batch: int | None
    arg_lambda: object


@dataclass
class ModalityTrace:
    name: str
    baseline: tuple
    n: np.ndarray
    W: np.ndarray
    alarms: list
    day_verdicts: list


@dataclass
class ScenarioOutput:
    modalities: dict
    alarms: list
    config: dict
    day_verdicts: list = field(default_factory=list)

    @property
    def any_alarm(self) -> bool:
        return bool(self.alarms)

    def to_dict(self) -> dict:
        return {
            "type": "scenario",
            "config": self.config,
            "day_verdicts": list(self.day_verdicts),
            "alarms": [vars(a) for a in self.alarms],
            "modalities": {
                name: {
                    "baseline": list(t.baseline),
                    "n": t.n.tolist(),
                    "W": t.W.tolist(),
                    "day_verdicts": list(t.day_verdicts),
                }
                for name, t in self.modalities.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioOutput":
        alarms = [Alarm(**{**a, "arg_lambda": tuple(a["arg_lambda"]) if isinstance(a["arg_lambda"], list)
                           else a["arg_lambda"]}) for a in doc["alarms"]]
        mods = {}
        for name, m in doc["modalities"].items():
            mods[name] = ModalityTrace(name, tuple(m["baseline"]), np.array(m["n"], dtype=np.int64),
                                       np.array(m["W"], dtype=float), [a for a in alarms if a.modality == name],
                                       list(m["day_verdicts"]))
        return cls(mods, alarms, doc["config"], list(doc["day_verdicts"]))


def resolve_baseline(config: RunConfig, name: str, baselines: dict | None = None) -> tuple:
    """Baseline of modality ``name``: explicit argument, then config, then a fit."""
    if baselines and name in baselines:
        return tuple(baselines[name])
    base = config.baseline_for(name)
    if base is not None:
        return tuple(base)
    sources = config.fit_sources(name)
    if not sources:
        raise ModelError(f"modality {name!r} has neither a baseline nor training files")
    training = [ingest_csv(p, name, integer=config.family.is_poisson, round_counts=config.round_counts,
                           fill_gaps=config.fill_gaps, interval_seconds=config.interval_seconds)
                for p in sources]
    return mle_fit(config.family, config.partition, training)


def run_scenario(config: RunConfig, streams: dict, baselines: dict | None = None) -> ScenarioOutput:
    """Run one detector per modality over its stream.

    Detectors freeze when they fire.  ``reset_policy`` decides what happens
    next: ``never`` stops monitoring that modality, ``at-alarm`` restarts at the
    following sample, ``at-day-boundary`` skips to the next day.  With
    ``at-day-boundary`` every day also starts from a fresh statistic.
    The trajectory lists only samples actually consumed.
    """
    day_len = config.day_length
    policy = config.reset_policy
    if policy == "at-day-boundary" and day_len is None:
        policy = "never"
    traces, all_alarms = {}, []
    n_days = 0
    for name, seq in streams.items():
        if not isinstance(seq, ObservationSequence):
            seq = ObservationSequence(seq)
        if day_len is not None and len(seq) % day_len:
            raise ModelError(f"modality {name!r}: {len(seq)} samples is not a whole number of "
                             f"{day_len}-sample days")
        base = resolve_baseline(config, name, baselines)
        det = config.detector(IpidModel(config.family, config.partition, base), name)
        start = seq.start_index

        def day_of(k):
            return None if day_len is None else (k - start) // day_len + 1

        days = len(seq) // day_len if day_len else 0
        n_days = max(n_days, days)
        verdict = ["no-alarm"] * days
        ns, ws, alarms = [], [], []
        det.reset(start)
        k = start - 1
        for y in seq.values:
            k += 1
            new_day = day_len is not None and (k - start) % day_len == 0 and k != start
            if det.fired:
                if policy == "never":
                    break
                if policy == "at-day-boundary" and not new_day:
                    continue
            if new_day and policy == "at-day-boundary":
                det.reset(k)
            res = det.step(y)
            ns.append(k)
            ws.append(det.statistic)
            if res is not None:
                a = Alarm(name, day_of(k), k, res.statistic_at_stop, res.arg_batch, res.arg_lambda)
                alarms.append(a)
                if day_len is not None:
                    verdict[a.day - 1] = "alarm"
                if policy == "at-alarm":
                    det.reset(k + 1)
        if policy == "never" and alarms and day_len is not None:
            for d in range(alarms[0].day, days):
                verdict[d] = "not-monitored"
        traces[name] = ModalityTrace(name, base, np.array(ns, dtype=np.int64), np.array(ws, dtype=float),
                                     alarms, verdict)
        all_alarms.extend(alarms)
    overall = []
    for d in range(n_days):
        v = [t.day_verdicts[d] for t in traces.values() if d < len(t.day_verdicts)]
        overall.append("alarm" if "alarm" in v else ("no-alarm" if all(x == "no-alarm" for x in v)
                                                     else "not-monitored"))
    return ScenarioOutput(traces, all_alarms, config.echo(), overall)


def synthetic_days(model: IpidModel, n_days: int, day_length: int, seed, event_day: int | None = None,
                   event_start: int = 1, multiplier: float = 2.0, start_index: int = 1) -> ObservationSequence:
    """Concatenated days of samples; on ``event_day`` every batch is scaled by
    ``multiplier`` from in-day sample ``event_start`` to the end of that day."""
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    chunks = []
    for d, child in zip(range(1, n_days + 1), ss.spawn(n_days)):
        first = start_index + (d - 1) * day_length
        if d == event_day:
            change = ChangeSpec.all_batches([multiplier * t for t in model.baseline],
                                            gamma=first + event_start - 1)
        else:
            change = ChangeSpec.none()
        chunks.append(sample(model, change, day_length, seed=child, start_index=first).values)
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ObservationSequence(values, start_index)
