"""Core data model: users, scenes, interventions, trajectories, policies.

All types are immutable values. Serialization goes through ``to_dict`` /
``from_dict`` pairs whose field names are the wire format (JSONL trajectory
files, JSON policy registries).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyInput, InvariantViolation, UnknownFieldPath

AttrValue = str | int | float


class Category(str, Enum):
    CHINESE = "Chinese"
    SNACK = "Snack"
    EXOTIC = "Exotic"
    HOTPOT = "Hotpot"
    BBQ = "BBQ"


class Tier(str, Enum):
    HEAD = "Head"
    MID = "Mid"
    TAIL = "Tail"


CATEGORY_ORDER: tuple[Category, ...] = tuple(Category)
TIER_ORDER: tuple[Tier, ...] = tuple(Tier)


def _format_attr(value: AttrValue) -> str:
    if isinstance(value, bool):
        raise InvariantViolation("boolean attribute values are not supported")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvariantViolation(f"non-finite numeric attribute: {value!r}")
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class UserProfile:
    """A user described by an ordered list of (key, value) attributes."""

    user_id: str
    attributes: tuple[tuple[str, AttrValue], ...]

    def __post_init__(self):
        keys = [k for k, _ in self.attributes]
        if len(keys) != len(set(keys)):
            raise InvariantViolation(f"duplicate attribute keys for user {self.user_id}")
        for _, v in self.attributes:
            _format_attr(v)

    @property
    def serialized_text(self) -> str:
        """Canonical rendering: ``key: value`` lines sorted by key."""
        return "\n".join(f"{k}: {_format_attr(v)}" for k, v in sorted(self.attributes))

    def get(self, key: str, default: AttrValue | None = None) -> AttrValue | None:
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "attributes": [[k, v] for k, v in self.attributes],
            "serialized_text": self.serialized_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserProfile":
        return cls(
            user_id=d["user_id"],
            attributes=tuple((k, v) for k, v in d["attributes"]),
        )


@dataclass(frozen=True)
class Scene:
    """A merchant context: category, traffic tier, price point, rating."""

    merchant_id: str
    category: Category
    tier: Tier
    price_tier: float
    rating: float
    promotion: str | None = None
    extra_features: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category(self.category))
        if not isinstance(self.tier, Tier):
            object.__setattr__(self, "tier", Tier(self.tier))
        if not (self.price_tier > 0 and math.isfinite(self.price_tier)):
            raise InvariantViolation(f"price_tier must be positive, got {self.price_tier}")
        if not (0.0 <= self.rating <= 5.0):
            raise InvariantViolation(f"rating must lie in [0, 5], got {self.rating}")
        keys = [k for k, _ in self.extra_features]
        if len(keys) != len(set(keys)):
            raise InvariantViolation("duplicate extra_features keys")
        for k, v in self.extra_features:
            if not math.isfinite(v):
                raise InvariantViolation(f"non-finite extra feature {k}={v}")

    @property
    def promotion_flag(self) -> float:
        return 1.0 if self.promotion else 0.0

    def numeric_field(self, name: str) -> float:
        """Resolve a numeric field by name (used by rule evaluation)."""
        if name == "price_tier":
            return float(self.price_tier)
        if name == "rating":
            return float(self.rating)
        if name == "promotion_flag":
            return self.promotion_flag
        for k, v in self.extra_features:
            if k == name:
                return float(v)
        raise UnknownFieldPath(f"scene has no numeric field {name!r}")

    @property
    def serialized_text(self) -> str:
        parts = [
            f"category: {self.category.value}",
            f"tier: {self.tier.value}",
            f"price_tier: {self.price_tier:g}",
            f"rating: {self.rating:g}",
        ]
        if self.promotion:
            parts.append(f"promotion: {self.promotion}")
        for k, v in self.extra_features:
            parts.append(f"{k}: {v:g}")
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "merchant_id": self.merchant_id,
            "category": self.category.value,
            "tier": self.tier.value,
            "price_tier": self.price_tier,
            "rating": self.rating,
            "promotion": self.promotion,
            "extra_features": [[k, v] for k, v in self.extra_features],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            merchant_id=d["merchant_id"],
            category=Category(d["category"]),
            tier=Tier(d["tier"]),
            price_tier=float(d["price_tier"]),
            rating=float(d["rating"]),
            promotion=d.get("promotion"),
            extra_features=tuple((k, float(v)) for k, v in d.get("extra_features", [])),
        )


# Scene fields an intervention may edit, beside "extra_features.<key>".
_EDITABLE_FIELDS = ("price_tier", "rating", "promotion", "category", "tier")


@dataclass(frozen=True)
class Intervention:
    """A counterfactual edit: ordered (field-path, new-value) pairs."""

    edits: tuple[tuple[str, object], ...] = ()
    label: str = "identity"

    def to_dict(self) -> dict:
        return {"edits": [[p, v] for p, v in self.edits], "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "Intervention":
        return cls(edits=tuple((p, v) for p, v in d.get("edits", [])), label=d.get("label", "identity"))

    @classmethod
    def identity(cls) -> "Intervention":
        return cls(edits=(), label="identity")


def apply_intervention(scene: Scene, intervention: Intervention) -> Scene:
    """Return a new Scene with the intervention's edits applied.

    Raises UnknownFieldPath for unresolvable paths and InvariantViolation when
    an edit would break a Scene invariant (the input scene is never mutated).
    """
    changes: dict = {}
    extra = dict(scene.extra_features)
    for path, value in intervention.edits:
        if path in _EDITABLE_FIELDS:
            if path in ("price_tier", "rating"):
                changes[path] = float(value)
            elif path == "promotion":
                changes[path] = None if value in (None, "") else str(value)
            else:
                changes[path] = value
        elif path.startswith("extra_features."):
            key = path.split(".", 1)[1]
            if key not in extra:
                raise UnknownFieldPath(f"unknown extra feature {key!r} on scene {scene.merchant_id}")
            extra[key] = float(value)
            changes["extra_features"] = tuple(extra.items())
        else:
            raise UnknownFieldPath(f"unknown field path {path!r}")
    try:
        return dataclasses.replace(scene, **changes)
    except ValueError as exc:
        raise InvariantViolation(str(exc)) from exc


@dataclass(frozen=True)
class Trajectory:
    """One observed high-intent choice: (user, scene, outcome) plus session facts."""

    user: UserProfile
    scene: Scene
    outcome: int
    timestamp: int
    compared_merchants: int = 1
    session_terminal: bool = True

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise InvariantViolation(f"outcome must be 0 or 1, got {self.outcome}")
        if self.timestamp <= 0:
            raise InvariantViolation("timestamp must be strictly positive")
        if self.compared_merchants < 1:
            raise InvariantViolation("compared_merchants must be >= 1")

    def to_dict(self) -> dict:
        return {
            "user": self.user.to_dict(),
            "scene": self.scene.to_dict(),
            "outcome": self.outcome,
            "timestamp": self.timestamp,
            "compared_merchants": self.compared_merchants,
            "session_terminal": self.session_terminal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            user=UserProfile.from_dict(d["user"]),
            scene=Scene.from_dict(d["scene"]),
            outcome=int(d["outcome"]),
            timestamp=int(d["timestamp"]),
            compared_merchants=int(d.get("compared_merchants", 1)),
            session_terminal=bool(d.get("session_terminal", True)),
        )


def select_high_intent(trajectories: Sequence[Trajectory], min_compared: int = 2) -> list[Trajectory]:
    """Keep sessions that compared >= min_compared merchants and terminated.

    Order-preserving filter; idempotent. min_compared below 2 is rejected
    because a single-merchant session carries no comparison signal.
    """
    if min_compared < 2:
        raise ValueError(f"min_compared must be >= 2, got {min_compared}")
    return [
        t
        for t in trajectories
        if t.compared_merchants >= min_compared and t.session_terminal
    ]


@dataclass(frozen=True)
class PolicyText:
    """Structured instruction: who the group is, what it weighs, how it decides."""

    user_characteristics: str
    key_decision_factors: tuple[str, ...]
    decision_guide: str

    def __post_init__(self):
        if not (self.user_characteristics and self.key_decision_factors and self.decision_guide):
            raise InvariantViolation("all PolicyText fields must be non-empty")

    def render(self) -> str:
        """Canonical single-text rendering used for embedding."""
        factors = "; ".join(self.key_decision_factors)
        return (
            f"user characteristics: {self.user_characteristics}\n"
            f"key decision factors: {factors}\n"
            f"decision guide: {self.decision_guide}"
        )

    def to_dict(self) -> dict:
        return {
            "user_characteristics": self.user_characteristics,
            "key_decision_factors": list(self.key_decision_factors),
            "decision_guide": self.decision_guide,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyText":
        return cls(
            user_characteristics=d["user_characteristics"],
            key_decision_factors=tuple(d["key_decision_factors"]),
            decision_guide=d["decision_guide"],
        )


@dataclass(frozen=True)
class DecisionPolicy:
    """Dual-modal mined policy: instruction text plus a unit-norm vector."""

    persona_id: int
    subgroup_id: int
    instruction: PolicyText
    vector: np.ndarray
    support: int

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-9:
            raise InvariantViolation(
                f"policy ({self.persona_id},{self.subgroup_id}) vector norm {norm} != 1"
            )
        if self.support < 1:
            raise InvariantViolation("policy support must be >= 1")

    def to_dict(self) -> dict:
        return {
            "persona_id": self.persona_id,
            "subgroup_id": self.subgroup_id,
            "instruction": self.instruction.to_dict(),
            "vector": [float(x) for x in self.vector],
            "support": self.support,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionPolicy":
        return cls(
            persona_id=int(d["persona_id"]),
            subgroup_id=int(d["subgroup_id"]),
            instruction=PolicyText.from_dict(d["instruction"]),
            vector=np.array(d["vector"], dtype=np.float64),
            support=int(d["support"]),
        )


@dataclass(frozen=True)
class PolicyRegistry:
    """The mined policy set, tied to the encoder that produced the vectors."""

    policies: tuple[DecisionPolicy, ...]
    encoder_fingerprint: str
    mined_at: int

    def __post_init__(self):
        if not self.policies:
            raise InvariantViolation("registry must contain at least one policy")
        dims = {p.vector.shape[0] for p in self.policies}
        if len(dims) != 1:
            raise InvariantViolation(f"mixed policy vector dimensions: {sorted(dims)}")
        ids = [(p.persona_id, p.subgroup_id) for p in self.policies]
        if len(ids) != len(set(ids)):
            raise InvariantViolation("duplicate (persona_id, subgroup_id) in registry")

    def __len__(self) -> int:
        return len(self.policies)

    @property
    def dimension(self) -> int:
        return self.policies[0].vector.shape[0]

    def vectors(self) -> np.ndarray:
        return np.stack([p.vector for p in self.policies])

    def to_dict(self) -> dict:
        return {
            "policies": [p.to_dict() for p in self.policies],
            "encoder_fingerprint": self.encoder_fingerprint,
            "mined_at": self.mined_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyRegistry":
        return cls(
            policies=tuple(DecisionPolicy.from_dict(p) for p in d["policies"]),
            encoder_fingerprint=d["encoder_fingerprint"],
            mined_at=int(d["mined_at"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PolicyMixture:
    """Per-scene categorical distribution over registry policies.

    ``member_embeddings`` optionally carries, per policy index, the profile
    embeddings of the visitors assigned to it; the simulator samples from it
    to integrate over concrete visitors. It is runtime-only state and not part
    of the wire format.
    """

    scene_id: str
    weights: tuple[tuple[int, float], ...]
    member_embeddings: dict[int, np.ndarray] | None = field(
        default=None, compare=False, repr=False
    )

    def __post_init__(self):
        total = 0.0
        for idx, w in self.weights:
            if w < 0:
                raise InvariantViolation(f"negative mixture weight for policy {idx}")
            total += w
        if abs(total - 1.0) > 1e-9:
            raise InvariantViolation(f"mixture weights sum to {total}, expected 1")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "weights": [[i, w] for i, w in self.weights]}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyMixture":
        return cls(
            scene_id=d["scene_id"],
            weights=tuple((int(i), float(w)) for i, w in d["weights"]),
        )


@dataclass(frozen=True)
class GroupEstimate:
    """Fused group-level purchase-rate prediction with per-branch detail."""

    hybrid_rate: float
    reason_mean: float
    fit_mean: float
    lam: float
    samples: int
    per_policy: tuple[tuple[int, int, float, float], ...]

    def __post_init__(self):
        expected = self.lam * self.reason_mean + (1.0 - self.lam) * self.fit_mean
        if abs(self.hybrid_rate - expected) > 1e-9:
            raise InvariantViolation("hybrid_rate is not the lambda-fusion of branch means")
        if self.samples < 1:
            raise InvariantViolation("samples must be >= 1")
        if sum(c for _, c, _, _ in self.per_policy) != self.samples:
            raise InvariantViolation("per-policy draw counts do not sum to samples")

    def to_dict(self) -> dict:
        return {
            "hybrid_rate": self.hybrid_rate,
            "reason_mean": self.reason_mean,
            "fit_mean": self.fit_mean,
            "lambda": self.lam,
            "samples": self.samples,
            "per_policy": [
                {"policy": i, "draws": c, "reason_mean": r, "fit_mean": f}
                for i, c, r, f in self.per_policy
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupEstimate":
        return cls(
            hybrid_rate=float(d["hybrid_rate"]),
            reason_mean=float(d["reason_mean"]),
            fit_mean=float(d["fit_mean"]),
            lam=float(d["lambda"]),
            samples=int(d["samples"]),
            per_policy=tuple(
                (int(p["policy"]), int(p["draws"]), float(p["reason_mean"]), float(p["fit_mean"]))
                for p in d["per_policy"]
            ),
        )


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_dict(), sort_keys=True))
            fh.write("\n")


def read_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Trajectory.from_dict(json.loads(line)))
    if not out:
        raise EmptyInput(f"no trajectories in {path}")
    return out


def iter_trajectories(path) -> Iterator[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield Trajectory.from_dict(json.loads(line))
