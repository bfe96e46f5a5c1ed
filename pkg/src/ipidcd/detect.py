"""Online GLR-CUSUM detectors for periodic count streams.

Two stopping rules are provided:

* :class:`SingleBatchDetector` runs one CUSUM per (batch, alternative) pair,
  each fed only by observations from its own batch, and stops as soon as any
  of them crosses the threshold.
* :class:`AllBatchDetector` pools every batch into one statistic.  For each
  candidate change time it maximizes over a vector of alternatives, one per
  batch.  Small grids are handled exactly by enumerating the product grid;
  large ones fall back to a window-limited GLR.

The maximum over candidate change times is evaluated with the recursion
``w <- max(w, 0) + llr``.  Statistics are not clamped at zero after the
increment, so they can be negative.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    IpidModel,
    ModelError,
    ObservationSequence,
    llr_coefficients,
)

__all__ = [
    "DetectorError",
    "PostChangeGrid",
    "multiplicative_grid",
    "cusum_update",
    "DetectionResult",
    "SingleBatchDetector",
    "AllBatchDetector",
    "statistic_bounds_check",
    "DEFAULT_MAX_PRODUCT_CELLS",
]

DEFAULT_MAX_PRODUCT_CELLS = 4096


class DetectorError(RuntimeError):
    """Detector used out of order (e.g. stepped after it fired)."""


@dataclass(frozen=True)
class PostChangeGrid:
    """Finite post-change alternatives per batch, each at least ``epsilon`` from baseline."""

    per_batch: tuple
    epsilon: float

    def __post_init__(self):
        per = tuple(tuple(float(x) for x in lams) for lams in self.per_batch)
        object.__setattr__(self, "per_batch", per)
        if not self.epsilon > 0:
            raise ModelError(f"epsilon must be positive, got {self.epsilon!r}")
        for e, lams in enumerate(per, start=1):
            if not lams:
                raise ModelError(f"batch {e} has an empty set of alternatives")

    @classmethod
    def build(cls, model: IpidModel, per_batch: Sequence[Sequence[float]], epsilon: float) -> "PostChangeGrid":
        grid = cls(per_batch, epsilon)
        grid.validate(model)
        return grid

    def validate(self, model: IpidModel) -> None:
        if len(self.per_batch) != model.n_batches:
            raise ModelError(f"grid has {len(self.per_batch)} batches, model has {model.n_batches}")
        for e, lams in enumerate(self.per_batch, start=1):
            theta = model.theta(e)
            for lam in lams:
                model.family.check_param(lam)
                if abs(lam - theta) < self.epsilon:
                    raise ModelError(
                        f"alternative {lam} for batch {e} is closer than epsilon={self.epsilon} "
                        f"to the baseline {theta}")

    @property
    def product_size(self) -> int:
        return math.prod(len(lams) for lams in self.per_batch)


def multiplicative_grid(model: IpidModel, multipliers: Sequence[float], epsilon: float | None = None) -> PostChangeGrid:
    """Alternatives ``m * theta`` for every multiplier ``m`` and batch.

    Without an explicit ``epsilon`` the smallest resulting separation is used.
    """
    per = [tuple(m * t for m in multipliers) for t in model.baseline]
    if epsilon is None:
        epsilon = min(abs(lam - t) for lams, t in zip(per, model.baseline) for lam in lams)
    return PostChangeGrid.build(model, per, epsilon)


def cusum_update(w: float, ell: float) -> float:
    return max(w, 0.0) + ell


@dataclass
class DetectionResult:
    fired: bool
    stopping_time: int | None
    statistic_at_stop: float | None
    arg_batch: int | None = None
    arg_lambda: object = None
    trajectory: list | None = field(default=None, repr=False)


def _as_values(stream) -> tuple:
    if isinstance(stream, ObservationSequence):
        return stream.values, stream.start_index
    return np.asarray(stream, dtype=float), None


class _Detector:
    """Shared state machine: clock, freeze-after-fire, run helpers."""

    def __init__(self, model: IpidModel, grid: PostChangeGrid, threshold: float):
        grid.validate(model)
        self.model = model
        self.grid = grid
        self.threshold = float(threshold)
        self._phase_batch = model.partition.phase_batches().tolist()
        self.reset()

    def reset(self, start_index: int = 1):
        if int(start_index) != start_index or start_index < 1:
            raise ModelError(f"start index must be a positive integer, got {start_index!r}")
        self.clock = int(start_index) - 1
        self.n_seen = 0
        self.fired = False
        self.result = None
        self._reset_state()
        return self

    @property
    def next_index(self) -> int:
        return self.clock + 1

    def advance(self, y) -> float:
        """Consume one observation and return the statistic, ignoring the threshold."""
        y = self.model.family.check_observation(y)
        self.clock += 1
        self.n_seen += 1
        self._update(self._phase_batch[(self.clock - 1) % self.model.period], y)
        return self.statistic

    def step(self, y) -> DetectionResult | None:
        """Consume one observation; return the result if the detector fires, else None."""
        if self.fired:
            raise DetectorError("detector already fired; call reset() before stepping again")
        stat = self.advance(y)
        if stat > self.threshold:
            self.fired = True
            batch, lam = self.argmax()
            self.result = DetectionResult(True, self.clock, stat, batch, lam)
            return self.result
        return None

    def run(self, stream, record: bool = False) -> DetectionResult:
        """Step through ``stream`` until the detector fires or the data ends.

        An :class:`ObservationSequence` resets the clock to its start index;
        a bare array continues from the current clock.
        """
        values, start = _as_values(stream)
        if start is not None:
            self.reset(start)
        traj = [] if record else None
        for y in values:
            res = self.step(y)
            if record:
                traj.append((self.clock, self.statistic))
            if res is not None:
                res.trajectory = traj
                return res
        return DetectionResult(False, None, None, trajectory=traj)


class _CusumBank(_Detector):
    """Independent CUSUM cells, each with per-batch affine llr coefficients.

    ``self._coef[b]`` lists ``(a, c)`` for every cell when the current sample is
    in 0-based batch ``b``; cells that ignore batch ``b`` carry ``(0, 0)``.
    """

    def _build(self, coef: list, labels: list):
        self._coef = coef
        self.cell_labels = labels

    def _reset_state(self):
        self.w = [0.0] * len(self.cell_labels)

    def _update(self, b: int, y: float):
        self.w = [max(x, 0.0) + (a * y - c) for x, (a, c) in zip(self.w, self._coef[b])]

    @property
    def statistic(self) -> float:
        return max(self.w)

    def _argmax_cell(self) -> int:
        best, idx = self.w[0], 0
        for i, x in enumerate(self.w):
            if x > best:
                best, idx = x, i
        return idx

    def coefficient_arrays(self) -> tuple:
        """``(a, c)`` arrays of shape ``(E, n_cells)`` for vectorized simulation."""
        arr = np.array(self._coef, dtype=float)
        return arr[..., 0], arr[..., 1]

    def vector_bank(self, n_streams: int) -> "CusumArrayBank":
        a, c = self.coefficient_arrays()
        return CusumArrayBank(self.model, a, c, n_streams)


class SingleBatchDetector(_CusumBank):
    """Minimum over batches of per-batch GLR-CUSUM stopping times.

    Cell ``(e, lam)`` accumulates ``llr(theta_e, lam, y)`` only on samples from
    batch ``e``.  The batch statistic is the max over that batch's cells; the
    detector fires when any batch statistic exceeds the threshold.
    """

    kind = "single"

    def __init__(self, model: IpidModel, grid: PostChangeGrid, threshold: float):
        grid.validate(model)
        fam = model.family
        labels = [(e + 1, lam) for e, lams in enumerate(grid.per_batch) for lam in lams]
        coef = []
        for b in range(model.n_batches):
            row = []
            for e, lam in labels:
                row.append(llr_coefficients(fam, model.theta(e), lam) if e == b + 1 else (0.0, 0.0))
            coef.append(row)
        self._build(coef, labels)
        super().__init__(model, grid, threshold)

    def batch_statistics(self) -> list:
        """Current ``W_n^e`` for ``e = 1..E``."""
        out = [-math.inf] * self.model.n_batches
        for (e, _), x in zip(self.cell_labels, self.w):
            out[e - 1] = max(out[e - 1], x)
        return out

    def argmax(self) -> tuple:
        return self.cell_labels[self._argmax_cell()]


class AllBatchDetector(_Detector):
    """Pooled GLR-CUSUM over all batches.

    ``mode="exact"`` keeps one CUSUM per vector of the product grid.
    ``mode="windowed"`` keeps, for each of the last ``window`` candidate change
    times, the per-batch log-likelihood-ratio sums and maximizes each batch
    separately; it is a lower bound on the exact statistic and equals it while
    ``window`` covers the whole stream.  ``mode="auto"`` picks exact while the
    product grid has at most ``max_cells`` vectors.
    """

    kind = "all"

    def __init__(self, model: IpidModel, grid: PostChangeGrid, threshold: float, mode: str = "auto",
                 window: int | None = None, max_cells: int = DEFAULT_MAX_PRODUCT_CELLS):
        grid.validate(model)
        size = grid.product_size
        if mode == "auto":
            mode = "exact" if size <= max_cells else "windowed"
        if mode == "exact" and size > max_cells:
            raise ModelError(f"product grid has {size} vectors, above the cap of {max_cells}")
        if mode not in ("exact", "windowed"):
            raise ModelError(f"unknown all-batch mode {mode!r}")
        self.mode = mode
        self.max_cells = max_cells
        self.window = int(window) if window is not None else 2 * model.period
        if self.window < 1:
            raise ModelError("window must be a positive integer")
        fam = model.family
        self._batch_coef = [
            [llr_coefficients(fam, model.theta(e + 1), lam) for lam in lams]
            for e, lams in enumerate(grid.per_batch)
        ]
        if mode == "exact":
            self.cell_labels = list(itertools.product(*grid.per_batch))
            idx = list(itertools.product(*[range(len(l)) for l in grid.per_batch]))
            self._coef = [[self._batch_coef[b][v[b]] for v in idx] for b in range(model.n_batches)]
        super().__init__(model, grid, threshold)

    def _reset_state(self):
        if self.mode == "exact":
            self.w = [0.0] * len(self.cell_labels)
        else:
            self._bank = self.vector_bank(1)

    def _update(self, b, y):
        if self.mode == "exact":
            self.w = [max(x, 0.0) + (a * y - c) for x, (a, c) in zip(self.w, self._coef[b])]
        else:
            self._bank.update(self.clock, np.array([y]))

    @property
    def statistic(self) -> float:
        if self.mode == "exact":
            return max(self.w)
        return float(self._bank.stat[0])

    def argmax(self) -> tuple:
        if self.mode == "exact":
            best, idx = self.w[0], 0
            for i, x in enumerate(self.w):
                if x > best:
                    best, idx = x, i
            return None, self.cell_labels[idx]
        return None, self._bank.arg_lambdas(0)

    def coefficient_arrays(self) -> tuple:
        arr = np.array(self._coef, dtype=float)
        return arr[..., 0], arr[..., 1]

    def vector_bank(self, n_streams: int):
        if self.mode == "exact":
            a, c = self.coefficient_arrays()
            return CusumArrayBank(self.model, a, c, n_streams)
        return WindowedArrayBank(self.model, self.grid, self._batch_coef, self.window, n_streams)


class CusumArrayBank:
    """CUSUM cells for many independent streams at once (shape ``(streams, cells)``).

    Uses the same arithmetic as the scalar detectors, so stopping times agree
    exactly with a scalar detector run on the same stream.
    """

    def __init__(self, model: IpidModel, a: np.ndarray, c: np.ndarray, n_streams: int):
        self.model = model
        self.a = a
        self.c = c
        self.w = np.zeros((n_streams, a.shape[1]))
        self._phase_batch = model.partition.phase_batches()

    @property
    def stat(self) -> np.ndarray:
        return self.w.max(axis=1)

    def update(self, k: int, y: np.ndarray) -> np.ndarray:
        """Advance every stream with its observation ``y[s]`` at global time ``k``."""
        b = self._phase_batch[(k - 1) % self.model.period]
        self.w = np.maximum(self.w, 0.0) + (self.a[b] * y[:, None] - self.c[b])
        return self.w.max(axis=1)

    def select(self, rows):
        """Keep only the given streams."""
        self.w = self.w[rows]


class WindowedArrayBank:
    """Window-limited all-batch GLR for many streams.

    ``table[s, r, j]`` holds, for the candidate change time stored in ring slot
    ``r``, the running llr sum of alternative ``j`` (columns grouped by batch).
    """

    def __init__(self, model: IpidModel, grid: PostChangeGrid, batch_coef: list, window: int, n_streams: int):
        self.model = model
        self.window = window
        sizes = [len(l) for l in grid.per_batch]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.grid = grid
        self.a = [np.array([ac[0] for ac in row]) for row in batch_coef]
        self.c = [np.array([ac[1] for ac in row]) for row in batch_coef]
        self.table = np.zeros((n_streams, window, self.offsets[-1]))
        self.row_time = np.zeros(window, dtype=np.int64)
        self.stat = np.zeros(n_streams)
        self._best_row = np.zeros(n_streams, dtype=np.int64)
        self._phase_batch = model.partition.phase_batches()

    def update(self, k: int, y: np.ndarray) -> np.ndarray:
        b = self._phase_batch[(k - 1) % self.model.period]
        slot = (k - 1) % self.window
        tab = self.table
        tab[:, slot, :] = 0.0
        self.row_time[slot] = k
        lo, hi = self.offsets[b], self.offsets[b + 1]
        tab[:, :, lo:hi] += (self.a[b] * y[:, None] - self.c[b])[:, None, :]
        row_stat = np.maximum.reduceat(tab, self.offsets[:-1], axis=2).sum(axis=2)
        valid = (self.row_time > 0) & (self.row_time > k - self.window)
        row_stat[:, ~valid] = -np.inf
        self._best_row = row_stat.argmax(axis=1)
        self.stat = row_stat[np.arange(len(self._best_row)), self._best_row]
        return self.stat

    def select(self, rows):
        self.table = self.table[rows]
        self.stat = self.stat[rows]
        self._best_row = self._best_row[rows]

    def arg_lambdas(self, s: int) -> tuple:
        row = self.table[s, self._best_row[s]]
        out = []
        for e, lams in enumerate(self.grid.per_batch):
            seg = row[self.offsets[e]:self.offsets[e + 1]]
            out.append(lams[int(seg.argmax())])
        return tuple(out)


def statistic_bounds_check(all_detector: AllBatchDetector, single: SingleBatchDetector,
                           prefix: ObservationSequence, slack: float = 1e-9) -> bool:
    """Check ``sum_e max_lam S_e(1..n; lam) <= W_n <= sum_e W_n^e`` along ``prefix``.

    ``S_e(1..n; lam)`` is the llr sum of batch ``e`` over the whole prefix (no
    maximization over the change time).  Both detectors are reset to the
    prefix's start index and consume it regardless of their thresholds.
    """
    if all_detector.model != single.model or all_detector.grid != single.grid:
        raise ModelError("detectors must share the same model and grid")
    all_detector.reset(prefix.start_index)
    single.reset(prefix.start_index)
    fam = single.model.family
    coefs = [
        [llr_coefficients(fam, single.model.theta(e + 1), lam) for lam in lams]
        for e, lams in enumerate(single.grid.per_batch)
    ]
    full = [[0.0] * len(lams) for lams in single.grid.per_batch]
    ok = True
    for y in prefix.values:
        b = single._phase_batch[single.clock % single.model.period]
        w_all = all_detector.advance(y)
        single.advance(y)
        full[b] = [s + (a * y - c) for s, (a, c) in zip(full[b], coefs[b])]
        lower = sum(max(s) for s in full)
        upper = sum(single.batch_statistics())
        if not (lower - slack <= w_all <= upper + slack):
            ok = False
    return ok
