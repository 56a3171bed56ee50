"""
Two-stage cascade: per-make model heads over the fused feature.

The make branch picks a head; that head scores only the models of the
predicted make. Heads are trained on the detached fused features of their
own make's samples, so cascade training never touches the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Union

import numpy as np

from colabel.ndgrad import Adam, Linear, Module, Tensor, no_grad
from colabel.ndgrad import functional as F
from colabel.network.colabel_net import ColabelNet, forward
from colabel.network.models import ForwardOutputs
from colabel.synth.models import KnowledgeBase
from colabel.utils.exceptions import ModelError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

MAKE_HEAD = "make"


class CascadeHeads(Module):
    """One linear head per make over x_F, scoring that make's model ids."""

    def __init__(self, fusion_dim: int, kb: KnowledgeBase, rng: np.random.Generator) -> None:
        makes = sorted({make for make, _ in kb.entries.values()})
        self._catalog: Dict[int, List[int]] = {make: kb.models_for(make) for make in makes}
        self._n_models = len(kb.entries)
        self.heads = {str(make): Linear(fusion_dim, len(models), rng) for make, models in self._catalog.items()}

    def models_of(self, make_id: int) -> List[int]:
        return self._catalog[make_id]

    @property
    def n_models(self) -> int:
        return self._n_models

    def head(self, make_id: int) -> Linear:
        key = str(make_id)
        if key not in self.heads:
            raise ModelError("No cascade head for make", context={"make": make_id})
        return self.heads[key]


@dataclass
class CascadePrediction:
    """Full-catalog scores (−inf outside the routed make) and their argmax."""

    scores: np.ndarray
    predictions: np.ndarray
    routed_makes: np.ndarray


def cascade_scores(outputs: ForwardOutputs, heads: CascadeHeads) -> CascadePrediction:
    """Route each sample through the head of its predicted make."""
    if MAKE_HEAD not in outputs.y_branch:
        raise ModelError("Cascade routing needs a make head")
    makes = outputs.predictions(MAKE_HEAD)
    features = outputs.x_fused.data
    scores = np.full((features.shape[0], heads.n_models), -np.inf)
    with no_grad():
        for make in np.unique(makes):
            rows = np.flatnonzero(makes == make)
            local = heads.head(int(make))(Tensor(features[rows])).data
            scores[np.ix_(rows, heads.models_of(int(make)))] = local
    return CascadePrediction(scores=scores, predictions=np.argmax(scores, axis=1), routed_makes=makes)


def cascade_predict(
    model: ColabelNet,
    heads: CascadeHeads,
    images: Union[np.ndarray, Tensor],
) -> CascadePrediction:
    """
    Two-stage prediction: make branch argmax, then that make's head.

    Raises:
        ModelError: If a predicted make has no head
    """
    with no_grad():
        outputs = forward(model, images)
    return cascade_scores(outputs, heads)


def fused_features(model: ColabelNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """x_F for a stack of images, computed in batches without recording gradients."""
    chunks = [np.zeros((0, model.config.fusion_dim))]
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(forward(model, images[start:start + batch_size]).x_fused.data)
    return np.concatenate(chunks)


def train_cascade_heads(
    model: ColabelNet,
    images: np.ndarray,
    model_labels: np.ndarray,
    kb: KnowledgeBase,
    seed: int,
    epochs: int = 30,
    learning_rate: float = 1e-2,
    batch_size: int = 64,
) -> CascadeHeads:
    """
    Fit one head per make on the fused features of that make's samples.

    Args:
        model: Trained network providing x_F
        images: N×3×H×W training images
        model_labels: Model ids for the images
        kb: Knowledge base defining each make's model set
        seed: Initialization and shuffling seed
    """
    rng = np.random.default_rng(seed)
    heads = CascadeHeads(model.config.fusion_dim, kb, rng)
    features = fused_features(model, images, batch_size)
    labels = np.asarray(model_labels, dtype=np.int64)
    makes = np.array([kb.lookup(int(label))[0] for label in labels], dtype=np.int64)

    for make_key, head in heads.heads.items():
        make = int(make_key)
        rows = np.flatnonzero(makes == make)
        if rows.size == 0:
            logger.warning("Cascade head has no training samples", make=make)
            continue
        local_index = {model_id: index for index, model_id in enumerate(heads.models_of(make))}
        targets = np.array([local_index[int(label)] for label in labels[rows]])
        optimizer = Adam(head.parameters(), learning_rate=learning_rate)
        for _ in range(epochs):
            order = rng.permutation(rows.size)
            for start in range(0, rows.size, batch_size):
                chosen = order[start:start + batch_size]
                optimizer.zero_grad()
                loss = F.cross_entropy(head(Tensor(features[rows[chosen]])), targets[chosen])
                loss.backward()
                optimizer.step()
        logger.debug("Trained cascade head", make=make, samples=int(rows.size))
    return heads
