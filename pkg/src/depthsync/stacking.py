"""Two-fold out-of-fold prediction routing.

Sequences are split into P1, P2 and P_test. Model ``m1_1`` is trained on P1
and predicts P2, ``m1_2`` is trained on P2 and predicts P1, and ``m1`` is
trained on P1 ∪ P2 and predicts P_test. Every sequence is thus predicted by
a model that never saw it, and the prediction set has the input's size.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ManifestFormatError, TrainerError, WriteError
from .sequence_io import Frame, PairedDataset, PairedRecord, save_paired_dataset

DEFAULT_N_TEST = 4


@dataclass(frozen=True)
class FoldPlan:
    p1: tuple
    p2: tuple
    p_test: tuple
    seed: int = 0

    @property
    def training_sets(self):
        return {"m1_1": frozenset(self.p1), "m1_2": frozenset(self.p2),
                "m1": frozenset(self.p1) | frozenset(self.p2)}

    @property
    def routing(self):
        """Sequence id -> name of the model that predicts it."""
        route = {s: "m1_1" for s in self.p2}
        route.update({s: "m1_2" for s in self.p1})
        route.update({s: "m1" for s in self.p_test})
        return route

    def to_dict(self):
        return {"P1": list(self.p1), "P2": list(self.p2), "P_test": list(self.p_test), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        try:
            plan = cls(tuple(d["P1"]), tuple(d["P2"]), tuple(d["P_test"]), int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed fold plan: {exc!r}") from exc
        check_plan(plan)
        return plan


def check_plan(plan, ids=None):
    """Raises unless the groups are disjoint, cover ``ids``, and no routed model trained on its target."""
    groups = [set(plan.p1), set(plan.p2), set(plan.p_test)]
    if sum(map(len, groups)) != len(set().union(*groups)):
        raise InvalidInputError("fold groups overlap")
    if ids is not None and set().union(*groups) != set(ids):
        raise InvalidInputError("fold groups do not cover the sequence set")
    train = plan.training_sets
    for seq, model in plan.routing.items():
        if seq in train[model]:
            raise InvalidInputError(f"leakage: {seq!r} is predicted by {model}, which trained on it")


def make_fold_plan(ids, test_fraction=None, seed=0, n_test=None):
    """Seeded split into P1, P2, P_test.

    The test group has ``round(test_fraction * n)`` members (at least one), or
    ``n_test`` when no fraction is given (default 4), clipped so both training
    folds are non-empty. The rest splits evenly, P1 taking the odd one out.
    """
    ids = list(ids)
    n = len(ids)
    if n < 3:
        raise InvalidInputError(f"need at least 3 sequences, got {n}")
    if len(set(ids)) != n:
        raise InvalidInputError("sequence ids must be unique")
    if test_fraction is not None:
        if not 0 < test_fraction < 1:
            raise InvalidInputError(f"test fraction must lie in (0, 1), got {test_fraction}")
        k = max(1, math.floor(test_fraction * n + 0.5))
    else:
        k = DEFAULT_N_TEST if n_test is None else int(n_test)
        if k < 1:
            raise InvalidInputError("need at least one test sequence")
    k = min(k, n - 2)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    rest = shuffled[k:]
    n1 = (len(rest) + 1) // 2
    plan = FoldPlan(tuple(rest[:n1]), tuple(rest[n1:]), tuple(shuffled[:k]), int(seed))
    check_plan(plan, ids)
    return plan


def run_out_of_fold(plan, trainer, sequences):
    """Train the three roster models and route each sequence to its model.

    ``trainer`` maps ``{id: sequence}`` to a denoiser (a callable on frames)
    and must be deterministic in its input. ``sequences`` maps id to anything
    with a ``frames`` list. Returns ``{id: [prediction per frame]}``.
    """
    check_plan(plan, sequences.keys())
    models = {}
    for name, members in plan.training_sets.items():
        subset = {s: sequences[s] for s in sorted(members, key=str)}
        try:
            models[name] = trainer(subset)
        except Exception as exc:
            raise TrainerError(name, exc) from exc
    routing = plan.routing
    out = {}
    for seq_id, seq in sequences.items():
        model = models[routing[seq_id]]
        out[seq_id] = [model(f) for f in seq.frames]
    return out


def save_fold_plan(plan, path):
    try:
        with open(path, "w") as fh:
            json.dump(plan.to_dict(), fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc


def load_fold_plan(path):
    try:
        with open(path) as fh:
            return FoldPlan.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestFormatError(f"cannot read fold plan: {exc}", path) from exc


def save_out_of_fold(predictions, datasets, path):
    """Writes each sequence's predictions as a paired dataset whose LQ depth
    is the first-level prediction, ready for a second-level trainer."""
    for seq_id, ds in datasets.items():
        preds = predictions[seq_id]
        if len(preds) != len(ds.records):
            raise InvalidInputError(f"{seq_id}: {len(preds)} predictions for {len(ds.records)} records")
        recs = [PairedRecord(r.lq_index, r.hq_index,
                             Frame(r.lq_frame.color, np.asarray(p, dtype=np.float64), r.lq_frame.timestamp_us,
                                   r.lq_frame.mask),
                             r.depth, r.color, r.gap_ms) for r, p in zip(ds.records, preds)]
        out = PairedDataset(recs, ds.intrinsics, ds.delta_ms, ds.transform, ds.max_gap_ms, str(seq_id))
        save_paired_dataset(out, Path(path) / str(seq_id))
