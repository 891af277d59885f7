"""Group-level aggregation: mixture estimation, Monte Carlo draws, fusion.

Each scene gets a categorical policy mixture from nearest-policy assignment
of its historical visitors. Simulation then draws a policy per step from the
mixture (and a concrete visitor embedding within that policy), collects the
reasoning branch's binary decision and the fitting branch's probability, and
fuses the two branch means with the convex weight ``lam``.

Per-draw randomness derives from (seed, draw index, attempt), so draws are
order-independent and safe to parallelize without changing results.
"""

from __future__ import annotations

import numpy as np

from .backends import GenerativeBackend
from .domain import (
    GroupEstimate,
    Intervention,
    PolicyMixture,
    PolicyRegistry,
    Scene,
    UserProfile,
    apply_intervention,
)
from .encoder import EncoderConfig, encode
from .errors import (
    EmptyVisitorLog,
    FingerprintMismatch,
    InvariantViolation,
    UnparseableDecision,
)
from .fitting import BoostedModel, FeaturizerConfig, featurize, predict_batch
from .mining import assign_policy

DECISION_RETRY_BUDGET = 3


def estimate_mixture(
    registry: PolicyRegistry,
    visitor_profiles: list[UserProfile],
    scene_id: str,
    encoder_cfg: EncoderConfig,
    embedding_cache: dict | None = None,
) -> PolicyMixture:
    """Nearest-policy assignment of visitors, normalized to a distribution."""
    if not visitor_profiles:
        raise EmptyVisitorLog(f"no visitors recorded for scene {scene_id}")
    if encoder_cfg.fingerprint != registry.encoder_fingerprint:
        raise FingerprintMismatch(
            f"encoder {encoder_cfg.fingerprint} does not match registry "
            f"{registry.encoder_fingerprint}"
        )
    counts: dict[int, int] = {}
    members: dict[int, list[np.ndarray]] = {}
    for profile in visitor_profiles:
        if embedding_cache is not None and profile.user_id in embedding_cache:
            emb = embedding_cache[profile.user_id]
        else:
            emb = encode(profile.serialized_text, encoder_cfg)
            if embedding_cache is not None:
                embedding_cache[profile.user_id] = emb
        idx = assign_policy(registry, emb)
        counts[idx] = counts.get(idx, 0) + 1
        members.setdefault(idx, []).append(emb.values)
    total = len(visitor_profiles)
    weights = tuple((idx, counts[idx] / total) for idx in sorted(counts))
    return PolicyMixture(
        scene_id=scene_id,
        weights=weights,
        member_embeddings={idx: np.stack(vecs) for idx, vecs in members.items()},
    )


def _draw_rng(seed: int, draw: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, draw, attempt)))


def simulate(
    registry: PolicyRegistry,
    mixture: PolicyMixture,
    scene: Scene,
    intervention: Intervention | None,
    model: BoostedModel,
    backend: GenerativeBackend,
    n_draws: int,
    lam: float,
    seed: int,
    fcfg: FeaturizerConfig,
    stratified: bool = False,
    policy_vector_override: np.ndarray | None = None,
) -> GroupEstimate:
    """Monte Carlo dual-branch estimate of the group purchase rate.

    Deterministic given seed for deterministic backends. Draws whose decision
    cannot be parsed are resampled (policy and all) up to a bounded budget.
    """
    if n_draws < 1:
        raise InvariantViolation(f"sample count must be >= 1, got {n_draws}")
    if not (0.0 <= lam <= 1.0):
        raise InvariantViolation(f"lambda must lie in [0, 1], got {lam}")
    if fcfg.fingerprint != model.feature_fingerprint:
        raise FingerprintMismatch("featurizer does not match the fitted model")
    for idx, _ in mixture.weights:
        if not (0 <= idx < len(registry)):
            raise InvariantViolation(f"mixture references unknown policy {idx}")

    staged = apply_intervention(scene, intervention) if intervention else scene

    policy_ids = np.array([idx for idx, _ in mixture.weights], dtype=np.int64)
    cum_weights = np.cumsum(np.array([w for _, w in mixture.weights], dtype=np.float64))
    members = mixture.member_embeddings or {}

    if stratified:
        # deterministic proportional allocation (largest remainder)
        raw = np.array([w for _, w in mixture.weights]) * n_draws
        alloc = np.floor(raw).astype(np.int64)
        short = n_draws - int(alloc.sum())
        if short > 0:
            order = np.argsort(-(raw - np.floor(raw)), kind="stable")
            alloc[order[:short]] += 1
        plan = np.repeat(policy_ids, alloc)
    else:
        plan = None

    decision_memo: dict[int, int] = {}

    def decide_for(policy_idx: int) -> int:
        if backend.deterministic and policy_idx in decision_memo:
            return decision_memo[policy_idx]
        value = backend.decide(staged, registry.policies[policy_idx].instruction)
        if backend.deterministic:
            decision_memo[policy_idx] = value
        return value

    drawn_policy = np.empty(n_draws, dtype=np.int64)
    decisions = np.empty(n_draws, dtype=np.float64)
    features = np.empty((n_draws, fcfg.total_dim), dtype=np.float64)

    for i in range(n_draws):
        last_error: Exception | None = None
        for attempt in range(DECISION_RETRY_BUDGET):
            rng = _draw_rng(seed, i, attempt)
            if plan is not None:
                policy_idx = int(plan[i])
            else:
                u = rng.random()
                pos = int(np.searchsorted(cum_weights, u, side="right"))
                policy_idx = int(policy_ids[min(pos, len(policy_ids) - 1)])
            pool = members.get(policy_idx)
            if pool is not None and len(pool):
                profile_vec = pool[int(rng.integers(len(pool)))]
            else:
                # mixture without visitor detail: the policy vector is the
                # best available stand-in for a member profile
                profile_vec = registry.policies[policy_idx].vector
            try:
                decision = decide_for(policy_idx)
            except UnparseableDecision as exc:
                last_error = exc
                continue
            drawn_policy[i] = policy_idx
            decisions[i] = float(decision)
            fit_vec = (
                policy_vector_override
                if policy_vector_override is not None
                else registry.policies[policy_idx].vector
            )
            features[i] = featurize(staged, profile_vec, fit_vec, fcfg)
            break
        else:
            raise UnparseableDecision(
                f"draw {i}: no parseable decision in {DECISION_RETRY_BUDGET} attempts: {last_error}"
            )

    fit_probs = predict_batch(model, features, fcfg)

    reason_mean = float(np.cumsum(decisions)[-1] / n_draws)
    fit_mean = float(np.cumsum(fit_probs)[-1] / n_draws)
    hybrid = lam * reason_mean + (1.0 - lam) * fit_mean

    per_policy = []
    for idx in policy_ids:
        mask = drawn_policy == idx
        count = int(mask.sum())
        if count == 0:
            continue
        per_policy.append(
            (
                int(idx),
                count,
                float(np.cumsum(decisions[mask])[-1] / count),
                float(np.cumsum(fit_probs[mask])[-1] / count),
            )
        )

    return GroupEstimate(
        hybrid_rate=hybrid,
        reason_mean=reason_mean,
        fit_mean=fit_mean,
        lam=lam,
        samples=n_draws,
        per_policy=tuple(per_policy),
    )
