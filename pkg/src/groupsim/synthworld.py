"""Synthetic ground-truth world: latent policies with known purchase rates.

Users belong to latent personas and, within a persona, to one latent decision
policy. A policy's purchase probability is logistic in scene features:

    p = sigmoid(price_w * (budget - price) + rating_w * (rating - floor)
                + affinity[category] + promo_w * promo + bias + eps),
    eps ~ Normal(0, noise_sd) per trajectory.

Profiles quote noisy observations of the policy limits (budget, rating floor),
so individual attributes under-determine behavior while pooled groups reveal
it. Group-level oracle rates integrate the noise with a fixed 64-node
Gauss-Hermite rule, giving every (scene, intervention) a closed-form target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    Category,
    Intervention,
    Scene,
    Tier,
    Trajectory,
    UserProfile,
    apply_intervention,
)
from .errors import InvariantViolation, UnknownScene

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(64)


@dataclass(frozen=True)
class LatentPolicy:
    """One latent decision mechanism with logistic response to scenes."""

    index: int
    persona_id: int
    style: str
    budget: float
    floor: float
    price_w: float
    rating_w: float
    promo_w: float
    bias: float
    noise_sd: float
    affinity: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if self.noise_sd < 0:
            raise InvariantViolation("noise_sd must be >= 0")

    def logit(self, scene: Scene) -> float:
        aff = dict(self.affinity).get(scene.category.value, 0.0)
        return (
            self.price_w * (self.budget - scene.price_tier)
            + self.rating_w * (scene.rating - self.floor)
            + aff
            + self.promo_w * scene.promotion_flag
            + self.bias
        )

    def rate(self, scene: Scene) -> float:
        """Noise-integrated purchase probability (Gauss-Hermite, 64 nodes)."""
        z = self.logit(scene)
        if self.noise_sd == 0.0:
            return float(1.0 / (1.0 + np.exp(-z)))
        shifted = z + np.sqrt(2.0) * self.noise_sd * _GH_NODES
        vals = 1.0 / (1.0 + np.exp(-shifted))
        return float(np.dot(_GH_WEIGHTS, vals) / np.sqrt(np.pi))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "persona_id": self.persona_id,
            "style": self.style,
            "budget": self.budget,
            "floor": self.floor,
            "price_w": self.price_w,
            "rating_w": self.rating_w,
            "promo_w": self.promo_w,
            "bias": self.bias,
            "noise_sd": self.noise_sd,
            "affinity": [[k, v] for k, v in self.affinity],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentPolicy":
        return cls(
            index=int(d["index"]),
            persona_id=int(d["persona_id"]),
            style=d["style"],
            budget=float(d["budget"]),
            floor=float(d["floor"]),
            price_w=float(d["price_w"]),
            rating_w=float(d["rating_w"]),
            promo_w=float(d["promo_w"]),
            bias=float(d["bias"]),
            noise_sd=float(d["noise_sd"]),
            affinity=tuple((k, float(v)) for k, v in d["affinity"]),
        )


@dataclass(frozen=True)
class PolicySpec:
    style: str
    budget: float
    floor: float
    price_w: float
    rating_w: float
    weight: float = 0.5
    promo_w: float = 0.15
    bias: float = 0.0


@dataclass(frozen=True)
class PersonaSpec:
    taste: str
    affinity: tuple[tuple[str, float], ...]
    policies: tuple[PolicySpec, ...]
    weight: float = 1.0


# Default personas: within each, one price-driven and one rating-driven
# policy, so the persona splits into distinct decision sub-groups. Slopes are
# steep enough that threshold rules approximate the logistic response well,
# while affinity/promotion terms stay invisible to rule-based reasoning.
DEFAULT_PERSONAS: tuple[PersonaSpec, ...] = (
    PersonaSpec(
        taste="spicy hotpot fans bold flavors",
        affinity=(("Hotpot", 0.25), ("BBQ", 0.2), ("Snack", -0.15)),
        policies=(
            PolicySpec("strict thrift saver", budget=16.0, floor=3.05, price_w=3.0, rating_w=0.5, weight=0.55),
            PolicySpec("plush comfort spender", budget=48.0, floor=4.05, price_w=0.05, rating_w=14.0, weight=0.45),
        ),
    ),
    PersonaSpec(
        taste="sweet snack casual quick bites",
        affinity=(("Snack", 0.25), ("Chinese", 0.15), ("Exotic", -0.15)),
        policies=(
            PolicySpec("fast street snacker", budget=13.0, floor=3.05, price_w=3.0, rating_w=0.4, weight=0.5),
            PolicySpec("keen quality hunter", budget=47.0, floor=4.35, price_w=0.05, rating_w=14.0, weight=0.5),
        ),
    ),
    PersonaSpec(
        taste="global exotic gourmet adventurous tastes",
        affinity=(("Exotic", 0.25), ("Chinese", 0.2), ("BBQ", -0.15)),
        policies=(
            PolicySpec("savvy deal chaser", budget=21.5, floor=3.05, price_w=2.8, rating_w=0.5, weight=0.5),
            PolicySpec("posh fine diner", budget=49.0, floor=4.65, price_w=0.05, rating_w=14.0, weight=0.5),
        ),
    ),
)

# Duality variant: two policies with opposite price response (one buys below
# its reference price, the other above it), used by the policy-conditioning
# ablation.
DUALITY_PERSONAS: tuple[PersonaSpec, ...] = (
    PersonaSpec(
        taste="practical thrifty weekday regulars",
        affinity=(("Snack", 0.2),),
        policies=(
            PolicySpec("frugal bargain devotee", budget=20.0, floor=3.2, price_w=0.7, rating_w=0.4, weight=1.0),
        ),
    ),
    PersonaSpec(
        taste="status premium upscale occasions",
        affinity=(("Exotic", 0.2),),
        policies=(
            PolicySpec("lavish prestige seeker", budget=24.0, floor=3.2, price_w=-0.7, rating_w=0.4, weight=1.0),
        ),
    ),
)

_AGE_GROUPS = ("18-24", "25-34", "35-44", "45-54", "55+")
_HOBBIES = (
    "cycling", "photography", "gaming", "reading", "hiking", "gardening",
    "movies", "yoga", "fishing", "painting", "chess", "karaoke",
)

_PRICE_RANGES = {Tier.HEAD: (20.0, 44.0), Tier.MID: (13.0, 30.0), Tier.TAIL: (8.0, 22.0)}
_TRAFFIC_WEIGHTS = {Tier.HEAD: 3.0, Tier.MID: 2.0, Tier.TAIL: 1.0}


@dataclass(frozen=True)
class WorldConfig:
    personas: tuple[PersonaSpec, ...] = DEFAULT_PERSONAS
    merchants: int = 20
    users: int = 2000
    trajectories: int = 20000
    seed: int = 0
    noise_sd: float = 0.25
    budget_obs_noise: float = 2.0
    floor_obs_noise: float = 0.12
    promotion_share: float = 0.4
    offtask_share: float = 0.05

    def __post_init__(self):
        if not self.personas or self.merchants < 1 or self.users < 1 or self.trajectories < 1:
            raise InvariantViolation("all world counts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "personas": [
                {
                    "taste": p.taste,
                    "affinity": [[k, v] for k, v in p.affinity],
                    "weight": p.weight,
                    "policies": [
                        {
                            "style": s.style,
                            "budget": s.budget,
                            "floor": s.floor,
                            "price_w": s.price_w,
                            "rating_w": s.rating_w,
                            "weight": s.weight,
                            "promo_w": s.promo_w,
                            "bias": s.bias,
                        }
                        for s in p.policies
                    ],
                }
                for p in self.personas
            ],
            "merchants": self.merchants,
            "users": self.users,
            "trajectories": self.trajectories,
            "seed": self.seed,
            "noise_sd": self.noise_sd,
            "budget_obs_noise": self.budget_obs_noise,
            "floor_obs_noise": self.floor_obs_noise,
            "promotion_share": self.promotion_share,
            "offtask_share": self.offtask_share,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        personas = tuple(
            PersonaSpec(
                taste=p["taste"],
                affinity=tuple((k, float(v)) for k, v in p.get("affinity", [])),
                weight=float(p.get("weight", 1.0)),
                policies=tuple(
                    PolicySpec(
                        style=s["style"],
                        budget=float(s["budget"]),
                        floor=float(s["floor"]),
                        price_w=float(s["price_w"]),
                        rating_w=float(s["rating_w"]),
                        weight=float(s.get("weight", 0.5)),
                        promo_w=float(s.get("promo_w", 0.15)),
                        bias=float(s.get("bias", 0.0)),
                    )
                    for s in p["policies"]
                ),
            )
            for p in d.get("personas", [])
        ) or DEFAULT_PERSONAS
        return cls(
            personas=personas,
            merchants=int(d.get("merchants", 20)),
            users=int(d.get("users", 2000)),
            trajectories=int(d.get("trajectories", 20000)),
            seed=int(d.get("seed", 0)),
            noise_sd=float(d.get("noise_sd", 0.6)),
            budget_obs_noise=float(d.get("budget_obs_noise", 2.0)),
            floor_obs_noise=float(d.get("floor_obs_noise", 0.12)),
            promotion_share=float(d.get("promotion_share", 0.4)),
            offtask_share=float(d.get("offtask_share", 0.05)),
        )


def duality_config(**overrides) -> WorldConfig:
    """World with two opposite-price-sensitivity policies (ablation target)."""
    defaults = dict(
        personas=DUALITY_PERSONAS,
        merchants=16,
        users=900,
        trajectories=9000,
        seed=0,
        budget_obs_noise=3.0,
    )
    defaults.update(overrides)
    return WorldConfig(**defaults)


@dataclass
class World:
    config: WorldConfig
    policies: tuple[LatentPolicy, ...]
    scenes: dict[str, Scene]
    profiles: dict[str, UserProfile]
    user_policy: dict[str, int]
    trajectories: list[Trajectory] = field(default_factory=list)
    visitor_logs: dict[str, list[str]] = field(default_factory=dict)

    def user_persona(self, user_id: str) -> int:
        return self.policies[self.user_policy[user_id]].persona_id

    def truth_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "policies": [p.to_dict() for p in self.policies],
            "users": dict(sorted(self.user_policy.items())),
            "merchants": {mid: s.to_dict() for mid, s in sorted(self.scenes.items())},
        }


def _build_policies(cfg: WorldConfig) -> tuple[LatentPolicy, ...]:
    out: list[LatentPolicy] = []
    for pid, persona in enumerate(cfg.personas):
        for spec in persona.policies:
            out.append(
                LatentPolicy(
                    index=len(out),
                    persona_id=pid,
                    style=spec.style,
                    budget=spec.budget,
                    floor=spec.floor,
                    price_w=spec.price_w,
                    rating_w=spec.rating_w,
                    promo_w=spec.promo_w,
                    bias=spec.bias,
                    noise_sd=cfg.noise_sd,
                    affinity=persona.affinity,
                )
            )
    return tuple(out)


def generate(cfg: WorldConfig) -> World:
    """Deterministically generate trajectories, visitor logs, and truth."""
    rng = np.random.default_rng(cfg.seed)
    policies = _build_policies(cfg)

    # merchants cycle through (category, tier) cells; price span follows tier
    scenes: dict[str, Scene] = {}
    categories = list(Category)
    tiers = list(Tier)
    for m in range(cfg.merchants):
        category = categories[m % len(categories)]
        tier = tiers[(m // len(categories)) % len(tiers)]
        lo, hi = _PRICE_RANGES[tier]
        price = round(float(rng.uniform(lo, hi)), 1)
        # ratings live on a coarse grid so no scene sits on a taste boundary
        rating = round(3.3 + 0.3 * float(rng.integers(0, 6)), 1)
        promo = "weekend combo deal" if rng.random() < cfg.promotion_share else None
        mid = f"m{m:03d}"
        scenes[mid] = Scene(
            merchant_id=mid,
            category=category,
            tier=tier,
            price_tier=price,
            rating=rating,
            promotion=promo,
        )

    # users: persona ~ persona weights, policy ~ within-persona weights
    persona_w = np.array([p.weight for p in cfg.personas], dtype=np.float64)
    persona_w = persona_w / persona_w.sum()
    policy_lookup: dict[int, list[LatentPolicy]] = {}
    for pol in policies:
        policy_lookup.setdefault(pol.persona_id, []).append(pol)

    profiles: dict[str, UserProfile] = {}
    user_policy: dict[str, int] = {}
    persona_specs = list(cfg.personas)
    for u in range(cfg.users):
        uid = f"u{u:05d}"
        pid = int(rng.choice(len(persona_specs), p=persona_w))
        pols = policy_lookup[pid]
        w = np.array([persona_specs[pid].policies[i].weight for i in range(len(pols))])
        pol = pols[int(rng.choice(len(pols), p=w / w.sum()))]
        budget_obs = round(float(max(5.0, pol.budget + rng.normal(0.0, cfg.budget_obs_noise))), 1)
        floor_obs = round(float(np.clip(pol.floor + rng.normal(0.0, cfg.floor_obs_noise), 3.0, 4.8)), 1)
        profiles[uid] = UserProfile(
            user_id=uid,
            attributes=(
                ("age_group", str(rng.choice(_AGE_GROUPS))),
                ("budget", budget_obs),
                ("hobby", str(rng.choice(_HOBBIES))),
                ("min_rating", floor_obs),
                ("style", pol.style),
                ("taste", persona_specs[pid].taste),
            ),
        )
        user_policy[uid] = pol.index

    # trajectories: merchants weighted by tier traffic, users uniform
    merchant_ids = sorted(scenes)
    traffic = np.array([_TRAFFIC_WEIGHTS[scenes[m].tier] for m in merchant_ids])
    traffic = traffic / traffic.sum()
    user_ids = sorted(profiles)

    trajectories: list[Trajectory] = []
    visitor_logs: dict[str, list[str]] = {m: [] for m in merchant_ids}
    seen: dict[str, set[str]] = {m: set() for m in merchant_ids}
    base_ts = 10_000
    for t in range(cfg.trajectories):
        uid = user_ids[int(rng.integers(len(user_ids)))]
        mid = merchant_ids[int(rng.choice(len(merchant_ids), p=traffic))]
        scene = scenes[mid]
        pol = policies[user_policy[uid]]
        z = pol.logit(scene) + float(rng.normal(0.0, cfg.noise_sd))
        outcome = int(rng.random() < 1.0 / (1.0 + np.exp(-z)))
        offtask = rng.random() < cfg.offtask_share
        compared = 1 if offtask else int(rng.integers(2, 7))
        terminal = True if not offtask else bool(rng.random() < 0.5)
        trajectories.append(
            Trajectory(
                user=profiles[uid],
                scene=scene,
                outcome=outcome,
                timestamp=base_ts + t,
                compared_merchants=compared,
                session_terminal=terminal,
            )
        )
        if uid not in seen[mid]:
            seen[mid].add(uid)
            visitor_logs[mid].append(uid)

    return World(
        config=cfg,
        policies=policies,
        scenes=scenes,
        profiles=profiles,
        user_policy=user_policy,
        trajectories=trajectories,
        visitor_logs=visitor_logs,
    )


def true_mixture(world_truth: dict, visitor_ids: list[str]) -> dict[int, float]:
    """Latent-policy distribution over a visitor list."""
    users = world_truth["users"]
    counts: dict[int, int] = {}
    for uid in visitor_ids:
        g = int(users[uid])
        counts[g] = counts.get(g, 0) + 1
    total = len(visitor_ids)
    return {g: c / total for g, c in sorted(counts.items())}


def oracle_rate(
    world_truth: dict,
    scene: Scene,
    intervention: Intervention | None,
    mixture: dict[int, float],
) -> float:
    """Closed-form group purchase rate under the latent mixture."""
    merchants = world_truth["merchants"]
    if scene.merchant_id not in merchants:
        raise UnknownScene(f"scene {scene.merchant_id} is not part of this world")
    staged = apply_intervention(scene, intervention) if intervention else scene
    policies = {int(p["index"]): LatentPolicy.from_dict(p) for p in world_truth["policies"]}
    rate = 0.0
    for g, w in mixture.items():
        rate += w * policies[g].rate(staged)
    return float(rate)


def save_world(world: World, out_dir) -> dict[str, str]:
    """Write trajectories.jsonl, visitor_logs.json, latent_truth.json."""
    import os

    from .domain import write_trajectories

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "trajectories": os.path.join(out_dir, "trajectories.jsonl"),
        "visitor_logs": os.path.join(out_dir, "visitor_logs.json"),
        "latent_truth": os.path.join(out_dir, "latent_truth.json"),
    }
    write_trajectories(paths["trajectories"], world.trajectories)
    with open(paths["visitor_logs"], "w", encoding="utf-8") as fh:
        json.dump(world.visitor_logs, fh, sort_keys=True, indent=1)
    with open(paths["latent_truth"], "w", encoding="utf-8") as fh:
        json.dump(world.truth_dict(), fh, sort_keys=True, indent=1)
    return paths
