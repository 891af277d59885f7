"""Policy mining: trajectories -> persona clusters -> rationales -> policies.

The full variant clusters user-profile embeddings into personas (K-Means),
explains every trajectory with the generative backend, refines each persona's
rationale embeddings with density clustering, discards noise, and summarizes
every surviving sub-group into a dual-modal policy (instruction text plus the
embedding of that text). Two reduced variants support ablations: K-Means-only
(one policy per persona) and no-clustering (one policy per distinct user).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import GenerativeBackend, Rationale
from .clustering import hdbscan, kmeans
from .domain import DecisionPolicy, PolicyRegistry, Trajectory
from .encoder import Embedding, EncoderConfig, encode
from .errors import EmptyInput, EmptyRegistry, FingerprintMismatch, InvariantViolation

VARIANTS = ("full", "kmeans_only", "no_clustering")

# ablation cap: at most this many distinct users become singleton policies
NO_CLUSTERING_USER_CAP = 5000


@dataclass(frozen=True)
class MiningConfig:
    k: int = 8
    min_cluster_size: int = 5
    min_samples: int | None = None
    variant: str = "full"
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvariantViolation(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.k < 1:
            raise InvariantViolation("persona count k must be >= 1")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "min_cluster_size": self.min_cluster_size,
            "min_samples": self.min_samples,
            "variant": self.variant,
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MiningConfig":
        return cls(
            k=int(d.get("k", 8)),
            min_cluster_size=int(d.get("min_cluster_size", 5)),
            min_samples=d.get("min_samples"),
            variant=d.get("variant", "full"),
            seed=int(d.get("seed", 0)),
            encoder=EncoderConfig.from_dict(d.get("encoder", {})),
        )


@dataclass(frozen=True)
class MiningReport:
    persona_sizes: tuple[int, ...]
    policies_per_persona: tuple[int, ...]
    noise_counts: tuple[int, ...]
    discarded_fraction: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "persona_sizes": list(self.persona_sizes),
            "policies_per_persona": list(self.policies_per_persona),
            "noise_counts": list(self.noise_counts),
            "discarded_fraction": self.discarded_fraction,
            "warnings": list(self.warnings),
        }


def _unique_users(trajectories: list[Trajectory]) -> tuple[list[str], dict[str, int], list]:
    """Distinct users in first-appearance order and a user_id -> index map."""
    ids: list[str] = []
    index: dict[str, int] = {}
    profiles = []
    for t in trajectories:
        if t.user.user_id not in index:
            index[t.user.user_id] = len(ids)
            ids.append(t.user.user_id)
            profiles.append(t.user)
    return ids, index, profiles


def mine(
    trajectories: list[Trajectory],
    cfg: MiningConfig,
    backend: GenerativeBackend,
) -> tuple[PolicyRegistry, MiningReport]:
    """Run the mining phase and emit (registry, report)."""
    if not trajectories:
        raise EmptyInput("mining requires at least one trajectory")

    user_ids, user_index, profiles = _unique_users(trajectories)
    profile_vectors = np.stack(
        [encode(p.serialized_text, cfg.encoder).values for p in profiles]
    )
    mined_at = max(t.timestamp for t in trajectories)

    rationales: list[Rationale] = [
        backend.explain(t.user, t.scene, t.outcome, trajectory=t) for t in trajectories
    ]

    policies: list[DecisionPolicy] = []
    warnings: list[str] = []

    if cfg.variant == "no_clustering":
        selected = list(range(len(user_ids)))
        if len(selected) > NO_CLUSTERING_USER_CAP:
            rng = np.random.default_rng(cfg.seed)
            selected = sorted(
                rng.permutation(len(selected))[:NO_CLUSTERING_USER_CAP].tolist()
            )
            warnings.append(
                f"no_clustering: subsampled {NO_CLUSTERING_USER_CAP} of {len(user_ids)} users"
            )
        keep = set(selected)
        by_user: dict[int, list[Rationale]] = {i: [] for i in selected}
        for r in rationales:
            idx = user_index[r.source_trajectory.user.user_id]
            if idx in keep:
                by_user[idx].append(r)
        subgroup = 0
        persona_count = 0
        for idx in selected:
            group = by_user[idx]
            if not group:
                continue
            text = backend.summarize(group)
            vec = encode(text.render(), cfg.encoder)
            policies.append(
                DecisionPolicy(
                    persona_id=0,
                    subgroup_id=subgroup,
                    instruction=text,
                    vector=vec.values,
                    support=len(group),
                )
            )
            subgroup += 1
            persona_count += 1
        persona_sizes = (len(trajectories),)
        policies_per_persona = (len(policies),)
        noise_counts = (0,)
    else:
        km = kmeans(profile_vectors, k=min(cfg.k, len(profiles)), seed=cfg.seed)
        user_persona = {uid: int(km.assignments[i]) for i, uid in enumerate(user_ids)}
        n_personas = km.centroids.shape[0]

        per_persona: list[list[Rationale]] = [[] for _ in range(n_personas)]
        for r in rationales:
            per_persona[user_persona[r.source_trajectory.user.user_id]].append(r)

        persona_sizes = tuple(len(group) for group in per_persona)
        noise = [0] * n_personas
        per_count = [0] * n_personas

        for pid, group in enumerate(per_persona):
            if not group:
                warnings.append(f"persona {pid} has no trajectories")
                continue
            if cfg.variant == "kmeans_only":
                clusters = {0: group}
            else:
                vectors = np.stack(
                    [encode(r.text, cfg.encoder).values for r in group]
                )
                result = hdbscan(
                    vectors,
                    min_cluster_size=cfg.min_cluster_size,
                    min_samples=cfg.min_samples,
                )
                clusters = {}
                for label in range(result.cluster_count):
                    clusters[label] = [
                        r for r, lab in zip(group, result.labels) if lab == label
                    ]
                noise[pid] = int((result.labels == -1).sum())
            if not clusters:
                warnings.append(f"persona {pid}: all rationales dissolved to noise")
                continue
            for j in sorted(clusters):
                text = backend.summarize(clusters[j])
                vec = encode(text.render(), cfg.encoder)
                policies.append(
                    DecisionPolicy(
                        persona_id=pid,
                        subgroup_id=j,
                        instruction=text,
                        vector=vec.values,
                        support=len(clusters[j]),
                    )
                )
                per_count[pid] += 1

        policies_per_persona = tuple(per_count)
        noise_counts = tuple(noise)

    if not policies:
        raise EmptyRegistry("all rationale clusters dissolved to noise")

    registry = PolicyRegistry(
        policies=tuple(policies),
        encoder_fingerprint=cfg.encoder.fingerprint,
        mined_at=mined_at,
    )
    total = len(trajectories)
    report = MiningReport(
        persona_sizes=persona_sizes,
        policies_per_persona=policies_per_persona,
        noise_counts=noise_counts,
        discarded_fraction=sum(noise_counts) / total if total else 0.0,
        warnings=tuple(warnings),
    )
    return registry, report


def assign_policy(registry: PolicyRegistry, profile_embedding: Embedding) -> int:
    """Index of the registry policy most cosine-similar to the embedding.

    Ties break to the lowest policy index. The embedding must carry the same
    encoder fingerprint the registry was mined with.
    """
    if profile_embedding.fingerprint and (
        profile_embedding.fingerprint != registry.encoder_fingerprint
    ):
        raise FingerprintMismatch(
            f"embedding fingerprint {profile_embedding.fingerprint} does not match "
            f"registry {registry.encoder_fingerprint}"
        )
    vectors = registry.vectors()
    query = profile_embedding.values
    qn = float(np.linalg.norm(query))
    if qn == 0.0:
        return 0
    sims = vectors @ (query / qn)
    return int(np.argmax(sims))
