"""Clock-offset search and nearest-timestamp frame matching.

The offset ``delta_ms`` relates the clocks as ``t_lq = t_hq + delta``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentInfeasibleError, InvalidInputError
from .spatial import calibrate

log = logging.getLogger(__name__)

DEFAULT_RANGE_MS = 60.0
DEFAULT_STEP_MS = 5.0
DEFAULT_MAX_GAP_MS = 15.0


@dataclass(frozen=True)
class FrameMapping:
    """``pairs`` holds ``(lq_index, hq_index, gap_ms)`` in LQ order."""

    pairs: tuple

    def __len__(self):
        return len(self.pairs)

    def within(self, max_gap_ms):
        return FrameMapping(tuple(p for p in self.pairs if p[2] <= max_gap_ms))

    def to_list(self):
        return [[int(i), int(j), float(g)] for i, j, g in self.pairs]


def _timestamps(x):
    if hasattr(x, "timestamps_us"):
        return np.asarray(x.timestamps_us, dtype=np.int64)
    return np.asarray(x, dtype=np.int64)


def match_frames(lq, hq, delta_ms):
    """Nearest shifted HQ frame for each LQ frame, by a two-pointer sweep.

    Accepts sequences or raw sorted timestamp arrays (microseconds). Ties go
    to the smaller HQ index.
    """
    t_lq = _timestamps(lq).astype(np.float64)
    shifted = _timestamps(hq).astype(np.float64) + float(delta_ms) * 1000.0
    if len(t_lq) == 0 or len(shifted) == 0:
        raise InvalidInputError("cannot match empty sequences")
    n_hq = len(shifted)
    pairs = []
    j = 0
    for i, t in enumerate(t_lq):
        while j + 1 < n_hq and abs(t - shifted[j + 1]) < abs(t - shifted[j]):
            j += 1
        pairs.append((i, j, abs(t - shifted[j]) / 1000.0))
    return FrameMapping(tuple(pairs))


def candidate_shifts(range_ms=DEFAULT_RANGE_MS, step_ms=DEFAULT_STEP_MS):
    if not (range_ms > 0 and step_ms > 0 and step_ms <= range_ms):
        raise InvalidInputError(f"need 0 < step ({step_ms}) <= range ({range_ms})")
    n = int(np.floor(range_ms / step_ms + 1e-9))
    return [k * step_ms for k in range(-n, n + 1)]


@dataclass
class ShiftCandidate:
    delta_ms: float
    residual: float
    n_pairs: int
    n_correspondences: int
    report: object = None
    mapping: FrameMapping = None
    error: str = None

    @property
    def eligible(self):
        return self.error is None


@dataclass
class ShiftSearchResult:
    delta_ms: float
    transform: object
    mapping: FrameMapping
    residual: float
    report: object
    candidates: list


def _evaluate_shift(lq, hq, provider, delta, max_gap_ms, calib_kwargs):
    mapping = match_frames(lq, hq, delta)
    kept = mapping.within(max_gap_ms)
    try:
        rep = calibrate(lq, hq, kept, provider, **calib_kwargs)
    except AlignmentInfeasibleError as exc:
        return ShiftCandidate(delta, np.inf, len(kept), 0, mapping=mapping, error=str(exc))
    return ShiftCandidate(delta, rep.residual, len(kept), rep.n_correspondences, rep, mapping)


def _rank_key(c):
    # minimal residual, then smaller |delta|, then negative delta first
    return (c.residual, abs(c.delta_ms), c.delta_ms)


def find_time_shift(lq, hq, provider, range_ms=DEFAULT_RANGE_MS, step_ms=DEFAULT_STEP_MS,
                    max_gap_ms=DEFAULT_MAX_GAP_MS, threads=1, coarse_to_fine=False, **calib_kwargs):
    """Grid search over clock offsets in ``[-range_ms, range_ms]``.

    For every candidate the frames are matched, pairs farther apart than
    ``max_gap_ms`` are dropped, the extrinsic is calibrated and the mean
    per-correspondence loss is recorded. The best candidate wins; with
    ``coarse_to_fine`` the two half-step neighbors of the winner are tried too.
    """
    grid = candidate_shifts(range_ms, step_ms)

    def run(deltas):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(lambda d: _evaluate_shift(lq, hq, provider, d, max_gap_ms, calib_kwargs),
                                     deltas))
        return [_evaluate_shift(lq, hq, provider, d, max_gap_ms, calib_kwargs) for d in deltas]

    cands = run(grid)
    for c in cands:
        log.info("shift %+.1f ms: residual %.6g px over %d correspondences (%d pairs)%s",
                 c.delta_ms, c.residual, c.n_correspondences, c.n_pairs,
                 "" if c.eligible else f" [skipped: {c.error}]")
    ok = [c for c in cands if c.eligible]
    if not ok:
        raise AlignmentInfeasibleError("too few correspondences at every candidate shift")
    best = min(ok, key=_rank_key)
    if coarse_to_fine:
        extra = [d for d in (best.delta_ms - step_ms / 2, best.delta_ms + step_ms / 2) if abs(d) <= range_ms]
        refined = run(extra)
        cands += refined
        best = min([best] + [c for c in refined if c.eligible], key=_rank_key)
    return ShiftSearchResult(best.delta_ms, best.report.transform, best.mapping, best.residual,
                             best.report, cands)
