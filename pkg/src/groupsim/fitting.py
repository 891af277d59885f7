"""Statistical fitting branch: gradient-boosted trees over policy-conditioned features.

Feature vectors concatenate scene features, the user-profile embedding, and
the assigned policy vector, in a fixed versioned order. Training is standard
boosting with logistic loss: start from the base-rate log-odds, then each
round fits a depth-bounded regression tree to the residuals ``y - sigmoid(score)``
with Newton leaf values ``sum(residual) / (sum(hessian) + l2)``. The learning
rate scales tree outputs at prediction time. Split search is exact greedy over
sorted unique values (ties: lowest feature index, then lowest threshold), with
the hot scan delegated to :mod:`groupsim.kernels`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import CATEGORY_ORDER, TIER_ORDER, Scene
from .encoder import Embedding
from .errors import DimensionMismatch, EmptyDataset, FingerprintMismatch

PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class FeaturizerConfig:
    """Fixed feature layout: scene block, profile embedding, policy vector."""

    embedding_dim: int = 256
    extra_feature_keys: tuple[str, ...] = ()

    def scene_feature_names(self) -> list[str]:
        names = ["price_tier", "rating"]
        names += [f"category={c.value}" for c in CATEGORY_ORDER]
        names += [f"tier={t.value}" for t in TIER_ORDER]
        names.append("promotion_flag")
        names += [f"extra:{k}" for k in self.extra_feature_keys]
        return names

    def feature_names(self) -> list[str]:
        names = self.scene_feature_names()
        names += [f"profile_{i}" for i in range(self.embedding_dim)]
        names += [f"policy_{i}" for i in range(self.embedding_dim)]
        return names

    @property
    def scene_dim(self) -> int:
        return 2 + len(CATEGORY_ORDER) + len(TIER_ORDER) + 1 + len(self.extra_feature_keys)

    @property
    def total_dim(self) -> int:
        return self.scene_dim + 2 * self.embedding_dim

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(self.feature_names())
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()

    def to_dict(self) -> dict:
        return {
            "embedding_dim": self.embedding_dim,
            "extra_feature_keys": list(self.extra_feature_keys),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizerConfig":
        return cls(
            embedding_dim=int(d.get("embedding_dim", 256)),
            extra_feature_keys=tuple(d.get("extra_feature_keys", ())),
        )


def scene_features(scene: Scene, fcfg: FeaturizerConfig) -> np.ndarray:
    out = np.zeros(fcfg.scene_dim, dtype=np.float64)
    out[0] = scene.price_tier
    out[1] = scene.rating
    out[2 + CATEGORY_ORDER.index(scene.category)] = 1.0
    out[2 + len(CATEGORY_ORDER) + TIER_ORDER.index(scene.tier)] = 1.0
    out[2 + len(CATEGORY_ORDER) + len(TIER_ORDER)] = scene.promotion_flag
    base = 2 + len(CATEGORY_ORDER) + len(TIER_ORDER) + 1
    extras = dict(scene.extra_features)
    for i, key in enumerate(fcfg.extra_feature_keys):
        out[base + i] = float(extras.get(key, 0.0))
    return out


def featurize(
    scene: Scene,
    profile_emb: Embedding | np.ndarray,
    policy_vec: Embedding | np.ndarray,
    fcfg: FeaturizerConfig,
) -> np.ndarray:
    """Deterministic fixed-order concatenation of the three blocks."""
    prof = profile_emb.values if isinstance(profile_emb, Embedding) else np.asarray(profile_emb)
    pol = policy_vec.values if isinstance(policy_vec, Embedding) else np.asarray(policy_vec)
    if prof.shape != (fcfg.embedding_dim,):
        raise DimensionMismatch(
            f"profile embedding has shape {prof.shape}, expected ({fcfg.embedding_dim},)"
        )
    if pol.shape != (fcfg.embedding_dim,):
        raise DimensionMismatch(
            f"policy vector has shape {pol.shape}, expected ({fcfg.embedding_dim},)"
        )
    return np.concatenate([scene_features(scene, fcfg), prof, pol])


@dataclass(frozen=True)
class TreeNode:
    feature: int
    threshold: float
    left: int
    right: int
    value: float

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class BoostedModel:
    initial_score: float
    base_rate: float
    learning_rate: float
    max_depth: int
    l2: float
    trees: tuple[tuple[TreeNode, ...], ...]
    feature_fingerprint: str
    n_features: int
    train_loss: tuple[float, ...] = field(default=(), compare=False)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {
            "initial_score": self.initial_score,
            "base_rate": self.base_rate,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "l2": self.l2,
            "feature_fingerprint": self.feature_fingerprint,
            "n_features": self.n_features,
            "trees": [
                [
                    {
                        "feature": n.feature,
                        "threshold": n.threshold,
                        "left": n.left,
                        "right": n.right,
                        "value": n.value,
                    }
                    for n in tree
                ]
                for tree in self.trees
            ],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        return cls(
            initial_score=float(d["initial_score"]),
            base_rate=float(d["base_rate"]),
            learning_rate=float(d["learning_rate"]),
            max_depth=int(d["max_depth"]),
            l2=float(d["l2"]),
            trees=tuple(
                tuple(
                    TreeNode(
                        feature=int(n["feature"]),
                        threshold=float(n["threshold"]),
                        left=int(n["left"]),
                        right=int(n["right"]),
                        value=float(n["value"]),
                    )
                    for n in tree
                )
                for tree in d["trees"]
            ),
            feature_fingerprint=d["feature_fingerprint"],
            n_features=int(d["n_features"]),
            train_loss=tuple(float(x) for x in d.get("train_loss", ())),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BoostedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(np.cumsum(terms)[-1] / len(terms))


def _seq_sum(values: np.ndarray) -> float:
    return float(np.cumsum(values)[-1]) if values.size else 0.0


def _grow_tree(
    x: np.ndarray,
    xt: np.ndarray,
    ordert: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    max_depth: int,
    l2: float,
) -> tuple[list[TreeNode], np.ndarray]:
    """One regression tree on (grad, hess); returns nodes and per-sample outputs."""
    n = x.shape[0]
    nodes: list[dict] = [{}]
    node_of = np.zeros(n, dtype=np.int32)
    outputs = np.zeros(n, dtype=np.float64)
    level_nodes = [0]
    node_samples: dict[int, np.ndarray] = {0: np.arange(n)}

    def make_leaf(nd: int, sel: np.ndarray) -> None:
        g = _seq_sum(grad[sel])
        h = _seq_sum(hess[sel])
        value = g / max(h + l2, 1e-12)
        nodes[nd].update(feature=-1, threshold=0.0, left=-1, right=-1, value=value)
        outputs[sel] = value
        node_of[sel] = -1

    for depth in range(max_depth + 1):
        if not level_nodes:
            break
        if depth == max_depth:
            for nd in level_nodes:
                make_leaf(nd, node_samples.pop(nd))
            break

        # map global node ids to level-relative scan ids; -1 = finished leaf
        remap = np.full(len(nodes), -1, dtype=np.int32)
        for i, nd in enumerate(level_nodes):
            remap[nd] = i
        scan_of = np.where(node_of >= 0, remap[np.maximum(node_of, 0)], np.int32(-1))
        scan_of = scan_of.astype(np.int32)
        node_g = np.array([_seq_sum(grad[node_samples[nd]]) for nd in level_nodes])
        node_h = np.array([_seq_sum(hess[node_samples[nd]]) for nd in level_nodes])
        gain, feat, thr, _, _ = kernels.scan_split_level(
            xt, ordert, grad, hess, scan_of, len(level_nodes), node_g, node_h, float(l2)
        )

        next_level: list[int] = []
        for i, nd in enumerate(level_nodes):
            sel = node_samples.pop(nd)
            if feat[i] < 0 or gain[i] <= 1e-12:
                make_leaf(nd, sel)
                continue
            f, t = int(feat[i]), float(thr[i])
            go_left = x[sel, f] <= t
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes[nd].update(feature=f, threshold=t, left=left_id, right=right_id, value=0.0)
            nodes.append({})
            nodes.append({})
            node_samples[left_id] = sel[go_left]
            node_samples[right_id] = sel[~go_left]
            node_of[sel[go_left]] = left_id
            node_of[sel[~go_left]] = right_id
            next_level.extend((left_id, right_id))
        level_nodes = next_level

    tree = [
        TreeNode(
            feature=nd["feature"], threshold=nd["threshold"],
            left=nd["left"], right=nd["right"], value=nd["value"],
        )
        for nd in nodes
    ]
    return tree, outputs


def train(
    x: np.ndarray,
    y: np.ndarray,
    fcfg: FeaturizerConfig,
    rounds: int = 200,
    learning_rate: float = 0.1,
    max_depth: int = 3,
    l2: float = 1.0,
    seed: int = 0,
) -> BoostedModel:
    """Fit the boosted ensemble. ``seed`` is recorded for config provenance;
    exact greedy training itself is already deterministic."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset("training requires a non-empty 2-D feature matrix")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} rows vs {y.shape[0]} labels")

    base = float(np.clip(_seq_sum(y) / len(y), PROB_CLAMP, 1.0 - PROB_CLAMP))
    initial = math.log(base / (1.0 - base))
    single_class = len(np.unique(y)) < 2

    trees: list[tuple[TreeNode, ...]] = []
    losses: list[float] = []
    score = np.full(len(y), initial, dtype=np.float64)
    losses.append(_logloss(y, _sigmoid(score)))

    if not single_class and rounds > 0:
        xt = np.ascontiguousarray(x.T)
        ordert = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T.astype(np.int32))
        for _ in range(rounds):
            p = _sigmoid(score)
            grad = y - p
            hess = p * (1.0 - p)
            tree, outputs = _grow_tree(x, xt, ordert, grad, hess, max_depth, l2)
            trees.append(tuple(tree))
            score = score + learning_rate * outputs
            losses.append(_logloss(y, _sigmoid(score)))

    return BoostedModel(
        initial_score=initial,
        base_rate=base,
        learning_rate=learning_rate,
        max_depth=max_depth,
        l2=l2,
        trees=tuple(trees),
        feature_fingerprint=fcfg.fingerprint,
        n_features=x.shape[1],
        train_loss=tuple(losses),
    )


def _tree_output(tree: tuple[TreeNode, ...], x: np.ndarray) -> float:
    node = tree[0]
    while not node.is_leaf:
        node = tree[node.left] if x[node.feature] <= node.threshold else tree[node.right]
    return node.value


def predict(model: BoostedModel, x: np.ndarray, fcfg: FeaturizerConfig | None = None) -> float:
    """Predicted purchase probability, clamped to [1e-6, 1 - 1e-6]."""
    if fcfg is not None and fcfg.fingerprint != model.feature_fingerprint:
        raise FingerprintMismatch(
            f"featurizer {fcfg.fingerprint} does not match model {model.feature_fingerprint}"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DimensionMismatch(f"feature vector shape {x.shape}, expected ({model.n_features},)")
    if not model.trees:
        return float(np.clip(model.base_rate, PROB_CLAMP, 1.0 - PROB_CLAMP))
    score = model.initial_score
    for tree in model.trees:
        score += model.learning_rate * _tree_output(tree, x)
    p = 1.0 / (1.0 + math.exp(-score)) if score >= 0 else math.exp(score) / (1.0 + math.exp(score))
    return float(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def predict_batch(
    model: BoostedModel, x: np.ndarray, fcfg: FeaturizerConfig | None = None
) -> np.ndarray:
    """Vectorized predict over rows of x."""
    if fcfg is not None and fcfg.fingerprint != model.feature_fingerprint:
        raise FingerprintMismatch(
            f"featurizer {fcfg.fingerprint} does not match model {model.feature_fingerprint}"
        )
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise DimensionMismatch(f"feature matrix has {x.shape[1]} columns, expected {model.n_features}")
    if not model.trees:
        return np.full(x.shape[0], np.clip(model.base_rate, PROB_CLAMP, 1.0 - PROB_CLAMP))
    scores = np.full(x.shape[0], model.initial_score, dtype=np.float64)
    for tree in model.trees:
        idx = np.zeros(x.shape[0], dtype=np.int64)
        feats = np.array([n.feature for n in tree])
        thrs = np.array([n.threshold for n in tree])
        lefts = np.array([n.left for n in tree])
        rights = np.array([n.right for n in tree])
        values = np.array([n.value for n in tree])
        active = feats[idx] >= 0
        while active.any():
            cur = idx[active]
            vals = x[np.where(active)[0], feats[cur]]
            idx[np.where(active)[0]] = np.where(vals <= thrs[cur], lefts[cur], rights[cur])
            active = feats[idx] >= 0
        scores += model.learning_rate * values[idx]
    return np.clip(_sigmoid(scores), PROB_CLAMP, 1.0 - PROB_CLAMP)
