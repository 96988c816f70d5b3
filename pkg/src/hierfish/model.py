"""Multi-head coarse/fine network with confidence-score multiplication.

A small dense trunk produces a shallow feature vector (fed to the coarse
head) and a deep feature vector (shared by all per-group fine heads and
the flat baseline head). The joint score of a species is the product of
its group's coarse probability and its within-group fine probability, so
the joint vector is itself a probability distribution over all species.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    MalformedDocument,
    NonFiniteActivation,
    NonFiniteInput,
    TaxonomyMismatch,
)
from .taxonomy import Taxonomy

MODE_TRUNK = "trunk"
MODE_PRECOMPUTED = "precomputed"


@dataclass
class ModelParams:
    mode: str
    # trunk: input -> shallow -> deep
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    # coarse head: shallow -> hidden -> G
    Wc1: np.ndarray
    bc1: np.ndarray
    Wc2: np.ndarray
    bc2: np.ndarray
    # one dense layer per group: deep -> |S_g|
    Wf: list[np.ndarray]
    bf: list[np.ndarray]
    # flat baseline head: deep -> hidden -> S
    Wl1: np.ndarray
    bl1: np.ndarray
    Wl2: np.ndarray
    bl2: np.ndarray

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d1(self) -> int:
        return self.W1.shape[1]

    @property
    def d2(self) -> int:
        return self.W2.shape[1]

    @property
    def hidden(self) -> int:
        return self.Wc1.shape[1]

    @property
    def G(self) -> int:
        return self.Wc2.shape[1]

    @property
    def S(self) -> int:
        return self.Wl2.shape[1]

    def fields(self):
        """Iterate (key, array) over every parameter array.

        Keys are either attribute names or ('Wf', g) / ('bf', g) pairs;
        used by the optimizer and the finite-difference gradient check.
        """
        for name in ("W1", "b1", "W2", "b2", "Wc1", "bc1", "Wc2", "bc2",
                     "Wl1", "bl1", "Wl2", "bl2"):
            yield name, getattr(self, name)
        for g in range(len(self.Wf)):
            yield ("Wf", g), self.Wf[g]
        for g in range(len(self.bf)):
            yield ("bf", g), self.bf[g]

    def get(self, key):
        if isinstance(key, tuple):
            name, g = key
            return getattr(self, name)[g]
        return getattr(self, key)

    def set(self, key, value):
        if isinstance(key, tuple):
            name, g = key
            getattr(self, name)[g] = value
        else:
            setattr(self, key, value)

    def copy(self) -> "ModelParams":
        return ModelParams(
            mode=self.mode,
            W1=self.W1.copy(), b1=self.b1.copy(),
            W2=self.W2.copy(), b2=self.b2.copy(),
            Wc1=self.Wc1.copy(), bc1=self.bc1.copy(),
            Wc2=self.Wc2.copy(), bc2=self.bc2.copy(),
            Wf=[w.copy() for w in self.Wf], bf=[b.copy() for b in self.bf],
            Wl1=self.Wl1.copy(), bl1=self.bl1.copy(),
            Wl2=self.Wl2.copy(), bl2=self.bl2.copy(),
        )

    def zeros_like(self) -> "ModelParams":
        z = self.copy()
        for key, arr in z.fields():
            arr[...] = 0.0
        return z


@dataclass
class HeadOutputs:
    coarse: np.ndarray              # (G,) probability vector
    fine_local: list[np.ndarray]    # per group, (|S_g|,) probability vector
    joint: np.ndarray               # (S,) probability vector, group-major


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(
    taxonomy: Taxonomy,
    d_in: int = 32,
    d1: int = 24,
    hidden: int = 24,
    d2: int = 16,
    seed: int = 0,
    mode: str = MODE_TRUNK,
) -> ModelParams:
    """Seeded uniform-Glorot weights, zero biases."""
    if mode not in (MODE_TRUNK, MODE_PRECOMPUTED):
        raise MalformedDocument(f"unknown mode {mode!r}")
    rng = np.random.default_rng([seed, 0])
    G = taxonomy.G
    S = taxonomy.S
    Wf = [_glorot(rng, d2, n) for n in taxonomy.group_sizes]
    bf = [np.zeros(n) for n in taxonomy.group_sizes]
    return ModelParams(
        mode=mode,
        W1=_glorot(rng, d_in, d1), b1=np.zeros(d1),
        W2=_glorot(rng, d1, d2), b2=np.zeros(d2),
        Wc1=_glorot(rng, d1, hidden), bc1=np.zeros(hidden),
        Wc2=_glorot(rng, hidden, G), bc2=np.zeros(G),
        Wf=Wf, bf=bf,
        Wl1=_glorot(rng, d2, hidden), bl1=np.zeros(hidden),
        Wl2=_glorot(rng, hidden, S), bl2=np.zeros(S),
    )


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the max to avoid overflow."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise EmptyInput("softmax over an empty vector")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("non-finite logits")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def joint_scores(coarse: np.ndarray, fine_local: list[np.ndarray]) -> np.ndarray:
    """Product of each group's coarse score with its local fine scores.

    The concatenated result sums to 1 because each local vector does.
    """
    coarse = np.asarray(coarse, dtype=np.float64)
    if coarse.ndim != 1 or len(fine_local) != coarse.shape[0]:
        raise DimensionMismatch(
            f"coarse has {coarse.shape} entries but {len(fine_local)} fine heads given"
        )
    return np.concatenate(
        [coarse[g] * np.asarray(fine_local[g], dtype=np.float64)
         for g in range(coarse.shape[0])]
    )


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(f"non-finite values in {name}")


def trunk_features(params: ModelParams, X: np.ndarray):
    """Batched trunk pass. Returns (z1, shallow, z2, deep)."""
    if X.shape[-1] != params.d_in:
        raise DimensionMismatch(
            f"input dim {X.shape[-1]} != model d_in {params.d_in}"
        )
    z1 = X @ params.W1 + params.b1
    A1 = np.maximum(z1, 0.0)
    z2 = A1 @ params.W2 + params.b2
    A2 = np.maximum(z2, 0.0)
    _check_finite("trunk", z2)
    return z1, A1, z2, A2


def heads_forward(params: ModelParams, shallow: np.ndarray, deep: np.ndarray):
    """Batched hierarchical heads. Returns (cache, coarse, fine_local, joint).

    shallow: (B, d1), deep: (B, d2); probabilities are (B, G), list of
    (B, |S_g|), and (B, S).
    """
    if shallow.shape[-1] != params.d1 or deep.shape[-1] != params.d2:
        raise DimensionMismatch(
            f"feature dims ({shallow.shape[-1]}, {deep.shape[-1]}) != "
            f"model ({params.d1}, {params.d2})"
        )
    zc1 = shallow @ params.Wc1 + params.bc1
    Hc = np.maximum(zc1, 0.0)
    zc2 = Hc @ params.Wc2 + params.bc2
    _check_finite("coarse head", zc2)
    coarse = stable_softmax(zc2)
    fine_local = []
    for g in range(params.G):
        zf = deep @ params.Wf[g] + params.bf[g]
        _check_finite(f"fine head {g}", zf)
        fine_local.append(stable_softmax(zf))
    joint = np.concatenate(
        [coarse[..., g:g + 1] * fine_local[g] for g in range(params.G)], axis=-1
    )
    cache = {"zc1": zc1, "Hc": Hc}
    return cache, coarse, fine_local, joint


def flat_forward(params: ModelParams, deep: np.ndarray):
    """Batched flat baseline head. Returns (cache, probs (B, S))."""
    if deep.shape[-1] != params.d2:
        raise DimensionMismatch(
            f"deep dim {deep.shape[-1]} != model d2 {params.d2}"
        )
    zl1 = deep @ params.Wl1 + params.bl1
    Hl = np.maximum(zl1, 0.0)
    zl2 = Hl @ params.Wl2 + params.bl2
    _check_finite("flat head", zl2)
    return {"zl1": zl1, "Hl": Hl}, stable_softmax(zl2)


def _resolve_features(params: ModelParams, x):
    """Map a raw vector or a (shallow, deep) pair to trunk outputs per mode."""
    if params.mode == MODE_TRUNK:
        if isinstance(x, tuple):
            raise DimensionMismatch("trunk mode expects a raw feature vector")
        x = np.asarray(x, dtype=np.float64)
        _, shallow, _, deep = trunk_features(params, x)
    else:
        if not (isinstance(x, tuple) and len(x) == 2):
            raise DimensionMismatch("precomputed mode expects a (shallow, deep) pair")
        shallow = np.asarray(x[0], dtype=np.float64)
        deep = np.asarray(x[1], dtype=np.float64)
    return shallow, deep


def forward(params: ModelParams, x) -> HeadOutputs:
    """Single-example hierarchical forward pass.

    `x` is a raw feature vector in trunk mode, or a (shallow, deep) pair
    in precomputed mode.
    """
    shallow, deep = _resolve_features(params, x)
    _, coarse, fine_local, joint = heads_forward(
        params, shallow[None, :], deep[None, :]
    )
    return HeadOutputs(
        coarse=coarse[0],
        fine_local=[f[0] for f in fine_local],
        joint=joint[0],
    )


def forward_flat(params: ModelParams, x) -> np.ndarray:
    """Single-example flat baseline pass; probability vector over all species."""
    _, deep = _resolve_features(params, x)
    _, probs = flat_forward(params, deep[None, :])
    return probs[0]


def save_checkpoint(params: ModelParams, taxonomy: Taxonomy, path: str) -> None:
    doc = {
        "mode": params.mode,
        "dims": {
            "d_in": params.d_in,
            "d1": params.d1,
            "hidden": params.hidden,
            "d2": params.d2,
        },
        "taxonomy_digest": taxonomy.digest(),
        "weights": {},
    }
    for key, arr in params.fields():
        name = key if isinstance(key, str) else f"{key[0]}{key[1]}"
        doc["weights"][name] = arr.tolist()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path: str, taxonomy: Taxonomy) -> ModelParams:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedDocument(f"invalid checkpoint JSON: {e}") from e
    if doc.get("taxonomy_digest") != taxonomy.digest():
        raise TaxonomyMismatch("checkpoint was trained against a different taxonomy")
    w = doc["weights"]

    def arr(name):
        return np.asarray(w[name], dtype=np.float64)

    G = taxonomy.G
    return ModelParams(
        mode=doc["mode"],
        W1=arr("W1"), b1=arr("b1"), W2=arr("W2"), b2=arr("b2"),
        Wc1=arr("Wc1"), bc1=arr("bc1"), Wc2=arr("Wc2"), bc2=arr("bc2"),
        Wf=[arr(f"Wf{g}") for g in range(G)],
        bf=[arr(f"bf{g}") for g in range(G)],
        Wl1=arr("Wl1"), bl1=arr("bl1"), Wl2=arr("Wl2"), bl2=arr("bl2"),
    )
