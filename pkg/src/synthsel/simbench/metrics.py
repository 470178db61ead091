from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Hashable, Iterable


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int

    def to_dict(self) -> dict:
        return asdict(self)


def score_selection(S_hat: Iterable[Hashable], S_true: Iterable[Hashable], p: int | None = None) -> Metrics:
    """Confusion counts of a selected set against the truth.

    Items may be variable indices or edge tuples. Precision of an empty
    selection and recall of an empty truth are taken as 0; ``f1`` is 0
    whenever both precision and recall are 0.
    """
    sel, true = set(S_hat), set(S_true)
    if p is not None:
        for item in sel | true:
            if isinstance(item, int) and not 0 <= item < p:
                raise ValueError(f"index {item} outside [0, {p})")
    tp = len(sel & true)
    fp = len(sel - true)
    fn = len(true - sel)
    precision = tp / len(sel) if sel else 0.0
    recall = tp / len(true) if true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision, recall, f1, tp, fp, fn)
