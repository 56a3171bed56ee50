"""
Retroactive correction of model predictions with the knowledge base.

When the knowledge base says the predicted model has a different make or
type than the make and type branches predicted, the model scores are
restricted to the models consistent with the branch predictions. The
restricted argmax replaces the original prediction only if its probability
is at least ``tau`` times the original prediction's probability.

Corrected rows have every score outside the consistent set set to -inf,
so running the correction again changes nothing.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from colabel.ndgrad import functional as F
from colabel.ndgrad import Tensor
from colabel.network.models import ForwardOutputs
from colabel.synth.models import AnnotationKind, KnowledgeBase
from colabel.utils.exceptions import CorrectionError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_TAU = 0.5
TYPE_HEAD = AnnotationKind.TYPE.value
MAKE_HEAD = AnnotationKind.MAKE.value


@dataclass
class CorrectionEntry:
    """One inconsistent prediction and what was done about it."""

    id: str
    original: int
    corrected: int
    changed: bool
    predicted_make: int
    predicted_type: int
    kb_make: Optional[int]
    kb_type: Optional[int]
    candidates: List[int] = field(default_factory=list)
    original_probability: float = 0.0
    best_candidate_probability: float = 0.0


@dataclass
class CorrectionResult:
    scores: np.ndarray
    predictions: np.ndarray
    log: List[CorrectionEntry]

    @property
    def n_changed(self) -> int:
        return sum(entry.changed for entry in self.log)


@dataclass
class CorrectionInputs:
    """Precomputed scores and branch predictions, e.g. from batched evaluation or a cascade."""

    model_scores: np.ndarray
    type_predictions: np.ndarray
    make_predictions: np.ndarray


def _probabilities(scores: np.ndarray) -> np.ndarray:
    return F.softmax(Tensor(scores), axis=1).data


def correct_scores(
    model_scores: np.ndarray,
    type_predictions: np.ndarray,
    make_predictions: np.ndarray,
    kb: KnowledgeBase,
    tau: float = DEFAULT_TAU,
    ids: Optional[Sequence[str]] = None,
) -> CorrectionResult:
    """
    Correct raw model scores given the make and type branch predictions.

    Works on any N×n_models score block: the fusion head's logits or
    cascade scores with -inf outside the routed make.

    Raises:
        CorrectionError: If the knowledge base is empty or tau is outside (0, 1]
    """
    if not kb.entries:
        raise CorrectionError("Knowledge base is empty")
    if not 0.0 < tau <= 1.0:
        raise CorrectionError("tau must lie in (0, 1]", context={"tau": tau})

    scores = np.array(model_scores, dtype=np.float64, copy=True)
    probabilities = _probabilities(scores)
    predictions = np.argmax(scores, axis=1)
    ids = list(ids) if ids is not None else [str(index) for index in range(scores.shape[0])]
    log: List[CorrectionEntry] = []

    for row, original in enumerate(predictions):
        make, kind = int(make_predictions[row]), int(type_predictions[row])
        kb_make, kb_type = kb.entries.get(int(original), (None, None))
        if kb_make == make and kb_type == kind:
            continue

        candidates = [model for model in kb.models_for(make, kind) if model < scores.shape[1]]
        entry = CorrectionEntry(
            id=ids[row],
            original=int(original),
            corrected=int(original),
            changed=False,
            predicted_make=make,
            predicted_type=kind,
            kb_make=kb_make,
            kb_type=kb_type,
            candidates=candidates,
            original_probability=float(probabilities[row, original]),
        )
        if candidates:
            best = candidates[int(np.argmax(probabilities[row, candidates]))]
            entry.best_candidate_probability = float(probabilities[row, best])
            if entry.best_candidate_probability >= tau * entry.original_probability:
                outside = np.ones(scores.shape[1], dtype=bool)
                outside[candidates] = False
                scores[row, outside] = -np.inf
                predictions[row] = best
                entry.corrected = int(best)
                entry.changed = True
        log.append(entry)

    logger.info(
        "Applied retroactive correction",
        samples=int(scores.shape[0]),
        inconsistent=len(log),
        corrected=sum(entry.changed for entry in log),
        tau=tau,
    )
    return CorrectionResult(scores=scores, predictions=predictions, log=log)


def match_correct(
    outputs: Union[ForwardOutputs, CorrectionInputs],
    kb: KnowledgeBase,
    tau: float = DEFAULT_TAU,
    ids: Optional[Sequence[str]] = None,
) -> CorrectionResult:
    """
    Correct the fused predictions of a forward pass.

    Raises:
        CorrectionError: If the outputs lack type or make heads, or the
            knowledge base is empty
    """
    if isinstance(outputs, CorrectionInputs):
        return correct_scores(outputs.model_scores, outputs.type_predictions, outputs.make_predictions, kb, tau, ids)
    missing = [head for head in (TYPE_HEAD, MAKE_HEAD) if head not in outputs.y_branch]
    if missing:
        raise CorrectionError("Correction needs type and make heads", context={"missing": missing})
    return correct_scores(
        outputs.y_fused.data,
        outputs.predictions(TYPE_HEAD),
        outputs.predictions(MAKE_HEAD),
        kb,
        tau,
        ids,
    )


def write_corrections(log: Sequence[CorrectionEntry], path: Union[str, Path]) -> Path:
    """Write one JSON object per inconsistent prediction."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for entry in log:
            handle.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
    return path
