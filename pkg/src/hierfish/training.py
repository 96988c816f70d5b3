"""Losses for all four training schemes, exact gradients, and the
image-based mini-batch SGD loop.

Schemes:
  baseline - flat head only, cross entropy on the species simplex.
  scheme1  - cross entropy on the coarse head plus cross entropy on the
             ground-truth group's local fine head (no score product).
  scheme2  - coarse cross entropy plus cross entropy on the joint
             (product) score of the true species, indexed within the
             ground-truth head.
  scheme3  - same two terms, with the joint term indexed over the full
             species simplex. For one-hot labels this is numerically
             identical to scheme2; both are kept as distinct config
             values and the identity is asserted in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import MODE_FEATURES, MODE_PRECOMPUTED, Dataset
from .errors import (
    DivergedTraining,
    EmptyDataset,
    InconsistentLabels,
    LabelOutOfRange,
    MalformedDocument,
    NonFiniteActivation,
)
from .model import ModelParams
from .taxonomy import Taxonomy

SCHEMES = ("baseline", "scheme1", "scheme2", "scheme3")


@dataclass
class TrainConfig:
    scheme: str = "scheme3"
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    mode: str = MODE_FEATURES
    d_in: int = 32
    d1: int = 24
    hidden: int = 24
    d2: int = 16

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise MalformedDocument(f"unknown scheme {self.scheme!r}")
        if self.learning_rate <= 0:
            raise MalformedDocument("learning_rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise MalformedDocument("momentum must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise MalformedDocument("bad epochs/batch_size")
        if self.mode not in (MODE_FEATURES, MODE_PRECOMPUTED):
            raise MalformedDocument(f"unknown mode {self.mode!r}")


@dataclass
class LabeledExample:
    features: object            # raw vector or (shallow, deep) pair
    coarse_label: int           # group index
    fine_label: int             # global species index


def check_example(ex: LabeledExample, taxonomy: Taxonomy) -> tuple[int, int]:
    """Validate labels; returns (group, local index) of the fine label."""
    if not (0 <= ex.coarse_label < taxonomy.G):
        raise LabelOutOfRange(f"coarse label {ex.coarse_label}")
    if not (0 <= ex.fine_label < taxonomy.S):
        raise LabelOutOfRange(f"fine label {ex.fine_label}")
    g, i = taxonomy.to_local(ex.fine_label)
    if g != ex.coarse_label:
        raise InconsistentLabels(
            f"fine label {ex.fine_label} belongs to group {g}, not {ex.coarse_label}"
        )
    return g, i


def compute_loss(scheme: str, outputs, example: LabeledExample, taxonomy: Taxonomy) -> float:
    """Per-example loss. `outputs` is HeadOutputs for the hierarchical
    schemes or a flat probability vector for the baseline."""
    if scheme == "baseline":
        probs = np.asarray(outputs, dtype=np.float64)
        if not (0 <= example.fine_label < probs.shape[0]):
            raise LabelOutOfRange(f"fine label {example.fine_label}")
        return float(-np.log(probs[example.fine_label]))
    g, i = check_example(example, taxonomy)
    coarse_term = -np.log(outputs.coarse[g])
    if scheme == "scheme1":
        return float(coarse_term - np.log(outputs.fine_local[g][i]))
    if scheme == "scheme2":
        # joint term indexed within the ground-truth head's block
        start = taxonomy.to_global(g, 0)
        return float(coarse_term - np.log(outputs.joint[start + i]))
    if scheme == "scheme3":
        return float(coarse_term - np.log(outputs.joint[example.fine_label]))
    raise MalformedDocument(f"unknown scheme {scheme!r}")


def _batch_losses(scheme, coarse, fine_local, flat, joint, y1, y2, taxonomy):
    # a zero probability yields an inf loss; the train loop turns that
    # into DivergedTraining rather than warning here
    with np.errstate(divide="ignore"):
        n = y1.shape[0]
        rows = np.arange(n)
        if scheme == "baseline":
            return -np.log(flat[rows, y2])
        coarse_term = -np.log(coarse[rows, y1])
        if scheme == "scheme1":
            offsets = np.array([taxonomy.to_global(g, 0) for g in range(taxonomy.G)])
            local = y2 - offsets[y1]
            fine_p = np.empty(n)
            for g in range(taxonomy.G):
                mask = y1 == g
                if mask.any():
                    fine_p[mask] = fine_local[g][mask, local[mask]]
            return coarse_term - np.log(fine_p)
        # scheme2 and scheme3 read the same joint element; both paths kept
        if scheme == "scheme2":
            offsets = np.array([taxonomy.to_global(g, 0) for g in range(taxonomy.G)])
            local = y2 - offsets[y1]
            idx = offsets[y1] + local
            return coarse_term - np.log(joint[rows, idx])
        return coarse_term - np.log(joint[rows, y2])


def _loss_and_grads(params: ModelParams, X, shallow_in, deep_in, y1, y2,
                    scheme: str, taxonomy: Taxonomy):
    """Mean batch loss and its gradient w.r.t. every parameter array.

    X is (B, d_in) in trunk mode; otherwise shallow_in/deep_in are used.
    """
    B = y1.shape[0]
    rows = np.arange(B)
    grads = params.zeros_like()
    if params.mode == M.MODE_TRUNK:
        z1, A1, z2, A2 = M.trunk_features(params, X)
    else:
        A1, A2 = shallow_in, deep_in

    if scheme == "baseline":
        cache, flat = M.flat_forward(params, A2)
        losses = -np.log(flat[rows, y2])
        Gl = flat.copy()
        Gl[rows, y2] -= 1.0
        Hl, zl1 = cache["Hl"], cache["zl1"]
        grads.Wl2 = Hl.T @ Gl
        grads.bl2 = Gl.sum(axis=0)
        dzl1 = (Gl @ params.Wl2.T) * (zl1 > 0)
        grads.Wl1 = A2.T @ dzl1
        grads.bl1 = dzl1.sum(axis=0)
        dA2 = dzl1 @ params.Wl1.T
        dA1 = np.zeros_like(A1)
    else:
        cache, coarse, fine_local, joint = M.heads_forward(params, A1, A2)
        losses = _batch_losses(scheme, coarse, fine_local, None, joint, y1, y2, taxonomy)
        # coarse-logit gradient: the joint term contributes a second
        # (coarse - onehot) for schemes 2/3 since log joint splits into
        # log coarse + log fine_local
        coef = 1.0 if scheme == "scheme1" else 2.0
        Gc = coarse.copy()
        Gc[rows, y1] -= 1.0
        Gc *= coef
        Hc, zc1 = cache["Hc"], cache["zc1"]
        grads.Wc2 = Hc.T @ Gc
        grads.bc2 = Gc.sum(axis=0)
        dzc1 = (Gc @ params.Wc2.T) * (zc1 > 0)
        grads.Wc1 = A1.T @ dzc1
        grads.bc1 = dzc1.sum(axis=0)
        dA1 = dzc1 @ params.Wc1.T
        dA2 = np.zeros_like(A2)
        offsets = np.array([taxonomy.to_global(g, 0) for g in range(taxonomy.G)])
        local = y2 - offsets[y1]
        for g in range(taxonomy.G):
            mask = y1 == g
            if not mask.any():
                continue
            Gf = fine_local[g][mask].copy()
            Gf[np.arange(mask.sum()), local[mask]] -= 1.0
            grads.Wf[g] = A2[mask].T @ Gf
            grads.bf[g] = Gf.sum(axis=0)
            dA2[mask] += Gf @ params.Wf[g].T

    if params.mode == M.MODE_TRUNK:
        dz2 = dA2 * (z2 > 0)
        grads.W2 = A1.T @ dz2
        grads.b2 = dz2.sum(axis=0)
        dA1 = dA1 + dz2 @ params.W2.T
        dz1 = dA1 * (z1 > 0)
        grads.W1 = X.T @ dz1
        grads.b1 = dz1.sum(axis=0)

    for _, arr in grads.fields():
        arr /= B
    return float(np.mean(losses)), grads


def _batch_arrays(batch: list[LabeledExample], params: ModelParams, taxonomy: Taxonomy):
    y1 = np.empty(len(batch), dtype=int)
    y2 = np.empty(len(batch), dtype=int)
    for k, ex in enumerate(batch):
        check_example(ex, taxonomy)
        y1[k] = ex.coarse_label
        y2[k] = ex.fine_label
    if params.mode == M.MODE_TRUNK:
        X = np.stack([np.asarray(ex.features, dtype=np.float64) for ex in batch])
        return X, None, None, y1, y2
    shallow = np.stack([np.asarray(ex.features[0], dtype=np.float64) for ex in batch])
    deep = np.stack([np.asarray(ex.features[1], dtype=np.float64) for ex in batch])
    return None, shallow, deep, y1, y2


def compute_gradients(params: ModelParams, batch: list[LabeledExample],
                      scheme: str, taxonomy: Taxonomy) -> ModelParams:
    """Gradient of the mean batch loss, shaped like the parameters."""
    if not batch:
        raise EmptyDataset("empty batch")
    X, shallow, deep, y1, y2 = _batch_arrays(batch, params, taxonomy)
    _, grads = _loss_and_grads(params, X, shallow, deep, y1, y2, scheme, taxonomy)
    return grads


def batch_loss(params: ModelParams, batch: list[LabeledExample],
               scheme: str, taxonomy: Taxonomy) -> float:
    """Mean batch loss only; used by the finite-difference check."""
    if not batch:
        raise EmptyDataset("empty batch")
    X, shallow, deep, y1, y2 = _batch_arrays(batch, params, taxonomy)
    if params.mode == M.MODE_TRUNK:
        _, A1, _, A2 = M.trunk_features(params, X)
    else:
        A1, A2 = shallow, deep
    if scheme == "baseline":
        _, flat = M.flat_forward(params, A2)
        return float(np.mean(-np.log(flat[np.arange(len(batch)), y2])))
    _, coarse, fine_local, joint = M.heads_forward(params, A1, A2)
    return float(np.mean(
        _batch_losses(scheme, coarse, fine_local, None, joint, y1, y2, taxonomy)
    ))


def dataset_examples(dataset: Dataset, taxonomy: Taxonomy) -> list[LabeledExample]:
    out = []
    for frame in dataset.frames():
        s = taxonomy.species_index(frame.species)
        g = taxonomy.group_index(frame.group)
        out.append(LabeledExample(features=frame.model_input(),
                                  coarse_label=g, fine_label=s))
    return out


def train(config: TrainConfig, train_split: Dataset,
          taxonomy: Taxonomy) -> tuple[ModelParams, list[float]]:
    """Image-based mini-batch SGD with momentum; deterministic for a seed.

    Returns the trained parameters and the per-epoch mean training loss.
    """
    examples = dataset_examples(train_split, taxonomy)
    if not examples:
        raise EmptyDataset("train split has no frames")
    mode = M.MODE_TRUNK if config.mode == MODE_FEATURES else M.MODE_PRECOMPUTED
    if mode == M.MODE_PRECOMPUTED:
        d1 = examples[0].features[0].shape[0]
        d2 = examples[0].features[1].shape[0]
        params = M.init_params(taxonomy, d_in=config.d_in, d1=d1,
                               hidden=config.hidden, d2=d2,
                               seed=config.seed, mode=mode)
    else:
        d_in = np.asarray(examples[0].features).shape[0]
        params = M.init_params(taxonomy, d_in=d_in, d1=config.d1,
                               hidden=config.hidden, d2=config.d2,
                               seed=config.seed, mode=mode)
    velocity = params.zeros_like()
    history: list[float] = []
    n = len(examples)
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = [examples[j] for j in order[start:start + config.batch_size]]
            X, shallow, deep, y1, y2 = _batch_arrays(batch, params, taxonomy)
            try:
                loss, grads = _loss_and_grads(
                    params, X, shallow, deep, y1, y2, config.scheme, taxonomy
                )
            except NonFiniteActivation as e:
                raise DivergedTraining(
                    f"exploded activations at epoch {epoch}; lower the learning rate"
                ) from e
            if not np.isfinite(loss):
                raise DivergedTraining(
                    f"non-finite loss at epoch {epoch}; lower the learning rate"
                )
            loss_sum += loss * len(batch)
            for key, v in velocity.fields():
                g = grads.get(key)
                v *= config.momentum
                v -= config.learning_rate * g
                params.get(key)[...] += v
        history.append(loss_sum / n)
    return params, history
