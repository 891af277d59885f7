"""Merchant-diagnosis HTTP service: what-if simulation over mined artifacts.

Read-only over the registry and fitted model; the only mutable state is the
in-memory session store (session = merchant + candidate strategies + results).
Every simulation accepts a seed (server-generated when omitted and echoed
back) so any response can be reproduced exactly.

Endpoint reference lives in docs/api.md; request/response shapes are also
exposed via FastAPI's OpenAPI schema.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass, field as dataclass_field

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .aggregate import estimate_mixture, simulate
from .backends import BackendConfig, GenerativeBackend
from .domain import (
    GroupEstimate,
    Intervention,
    PolicyMixture,
    PolicyRegistry,
    Scene,
    UserProfile,
    apply_intervention,
    read_trajectories,
)
from .encoder import EncoderConfig
from .errors import (
    FingerprintMismatch,
    GroupSimError,
    IncompleteSession,
    InvariantViolation,
    UnknownScene,
)
from .fitting import BoostedModel, FeaturizerConfig
from .metrics import kendall_tau

TOKEN_ENV_VAR = "GROUPSIM_TOKEN"


@dataclass
class DiagnosisSession:
    session_id: str
    merchant_id: str
    strategies: list[Intervention] = dataclass_field(default_factory=list)
    results: list[GroupEstimate | None] = dataclass_field(default_factory=list)
    expert_ranking: list[int] | None = None
    last_seed: int | None = None

    @property
    def complete(self) -> bool:
        return bool(self.strategies) and all(r is not None for r in self.results)


@dataclass
class ServiceState:
    registry: PolicyRegistry
    model: BoostedModel
    scenes: dict[str, Scene]
    visitor_profiles: dict[str, list[UserProfile]]
    encoder_cfg: EncoderConfig
    fcfg: FeaturizerConfig
    backend: GenerativeBackend
    default_draws: int = 1000
    default_lambda: float = 0.5
    snapshot_path: str | None = None
    mixtures: dict[str, PolicyMixture] = dataclass_field(default_factory=dict)
    sessions: dict[str, DiagnosisSession] = dataclass_field(default_factory=dict)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)

    def mixture_for(self, merchant_id: str) -> PolicyMixture:
        if merchant_id not in self.mixtures:
            visitors = self.visitor_profiles.get(merchant_id, [])
            self.mixtures[merchant_id] = estimate_mixture(
                self.registry, visitors, merchant_id, self.encoder_cfg
            )
        return self.mixtures[merchant_id]


def load_state(config: dict) -> ServiceState:
    """Load artifacts, verify fingerprints, and index scenes and visitors."""
    data = config.get("data", {})
    service = config.get("service", {})
    out_dir = data.get("output_dir", ".")
    registry_path = service.get("registry", os.path.join(out_dir, "registry.json"))
    model_path = service.get("model", os.path.join(out_dir, "model.json"))

    registry = PolicyRegistry.load(registry_path)
    model = BoostedModel.load(model_path)
    encoder_cfg = EncoderConfig.from_dict(config.get("mining", {}).get("encoder", {}))
    fcfg = FeaturizerConfig(embedding_dim=encoder_cfg.dimension)
    if registry.encoder_fingerprint != encoder_cfg.fingerprint:
        raise FingerprintMismatch(
            "registry was mined with a different encoder configuration", stage="startup"
        )
    if model.feature_fingerprint != fcfg.fingerprint:
        raise FingerprintMismatch(
            "model was trained with a different feature layout", stage="startup"
        )

    trajectories = read_trajectories(data["trajectories"])
    scenes: dict[str, Scene] = {}
    profiles: dict[str, UserProfile] = {}
    for t in trajectories:
        scenes.setdefault(t.scene.merchant_id, t.scene)
        profiles.setdefault(t.user.user_id, t.user)

    logs_path = data.get("visitor_logs")
    visitor_profiles: dict[str, list[UserProfile]] = {}
    if logs_path:
        with open(logs_path, encoding="utf-8") as fh:
            logs = json.load(fh)
        for mid, uids in logs.items():
            visitor_profiles[mid] = [profiles[u] for u in uids if u in profiles]
    else:
        seen: dict[str, set] = {}
        for t in trajectories:
            mid = t.scene.merchant_id
            if t.user.user_id not in seen.setdefault(mid, set()):
                seen[mid].add(t.user.user_id)
                visitor_profiles.setdefault(mid, []).append(t.user)

    agg = config.get("aggregation", {})
    return ServiceState(
        registry=registry,
        model=model,
        scenes=scenes,
        visitor_profiles=visitor_profiles,
        encoder_cfg=encoder_cfg,
        fcfg=fcfg,
        backend=BackendConfig.from_dict(config.get("backend", {})).build(),
        default_draws=int(agg.get("n_draws", 1000)),
        default_lambda=float(agg.get("lambda", 0.5)),
        snapshot_path=service.get("session_snapshot"),
    )


class StrategyIn(BaseModel):
    label: str = "strategy"
    edits: list[tuple[str, float | str]] = Field(default_factory=list)


class StrategiesIn(BaseModel):
    strategies: list[StrategyIn] = Field(min_length=1)


class SessionIn(BaseModel):
    merchant_id: str


class SimulateIn(BaseModel):
    lam: float = Field(default=0.5, ge=0.0, le=1.0, alias="lambda")
    n: int = Field(default=1000, ge=1)
    seed: int | None = None

    model_config = {"populate_by_name": True}


class ExpertRankingIn(BaseModel):
    ranking: list[int] = Field(min_length=2)


def rank_strategies(session: DiagnosisSession) -> dict:
    """Strategies by descending predicted rate; ties keep declaration order."""
    if not session.complete:
        raise IncompleteSession(
            f"session {session.session_id} has unsimulated strategies", stage="ranking"
        )
    order = sorted(
        range(len(session.strategies)),
        key=lambda i: (-session.results[i].hybrid_rate, i),
    )
    ranked = [
        {
            "strategy_index": i,
            "label": session.strategies[i].label,
            "hybrid_rate": session.results[i].hybrid_rate,
            "reason_mean": session.results[i].reason_mean,
            "fit_mean": session.results[i].fit_mean,
        }
        for i in order
    ]
    payload: dict = {"ranked": ranked, "tau": None}
    if session.expert_ranking is not None:
        n = len(session.strategies)
        predicted_rank = [0] * n
        for pos, idx in enumerate(order):
            predicted_rank[idx] = pos
        expert_rank = [0] * n
        for pos, idx in enumerate(session.expert_ranking):
            expert_rank[idx] = pos
        payload["tau"] = kendall_tau(predicted_rank, expert_rank)
    return payload


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="groupsim diagnosis service", version="0.1.0")
    app.state.service = state

    async def check_token(authorization: str | None = Header(default=None)) -> None:
        expected = os.environ.get(TOKEN_ENV_VAR)
        if expected and authorization != f"Bearer {expected}":
            raise HTTPException(status_code=401, detail="missing or invalid token")

    @app.exception_handler(GroupSimError)
    async def groupsim_error_handler(request: Request, exc: GroupSimError):
        status = 404 if isinstance(exc, UnknownScene) else 400
        return JSONResponse(status_code=status, content=exc.payload())

    def get_session(session_id: str) -> DiagnosisSession:
        session = state.sessions.get(session_id)
        if session is None:
            raise UnknownScene(f"unknown session {session_id}", stage="session")
        return session

    @app.get("/merchants", dependencies=[Depends(check_token)])
    async def merchants():
        return [
            {
                "merchant_id": s.merchant_id,
                "category": s.category.value,
                "tier": s.tier.value,
                "price_tier": s.price_tier,
                "rating": s.rating,
                "promotion": s.promotion,
                "visitors": len(state.visitor_profiles.get(s.merchant_id, [])),
            }
            for s in sorted(state.scenes.values(), key=lambda s: s.merchant_id)
        ]

    @app.get("/merchants/{merchant_id}", dependencies=[Depends(check_token)])
    async def merchant_detail(merchant_id: str):
        scene = state.scenes.get(merchant_id)
        if scene is None:
            raise UnknownScene(f"unknown merchant {merchant_id}", stage="lookup")
        mixture = state.mixture_for(merchant_id)
        return {
            "scene": scene.to_dict(),
            "mixture": mixture.to_dict(),
            "visitors": len(state.visitor_profiles.get(merchant_id, [])),
        }

    @app.get("/policies", dependencies=[Depends(check_token)])
    async def policies(merchant_id: str | None = None):
        weights: dict[int, float] = {}
        if merchant_id is not None:
            if merchant_id not in state.scenes:
                raise UnknownScene(f"unknown merchant {merchant_id}", stage="lookup")
            weights = dict(state.mixture_for(merchant_id).weights)
        return {
            "encoder_fingerprint": state.registry.encoder_fingerprint,
            "policies": [
                {
                    "index": i,
                    "persona_id": p.persona_id,
                    "subgroup_id": p.subgroup_id,
                    "support": p.support,
                    "instruction": p.instruction.to_dict(),
                    "mixture_weight": weights.get(i, 0.0) if merchant_id else None,
                }
                for i, p in enumerate(state.registry.policies)
            ],
        }

    @app.post("/sessions", dependencies=[Depends(check_token)], status_code=201)
    async def create_session(body: SessionIn):
        if body.merchant_id not in state.scenes:
            raise UnknownScene(f"unknown merchant {body.merchant_id}", stage="session")
        with state.lock:
            session_id = f"s{len(state.sessions):04d}-{secrets.token_hex(4)}"
            state.sessions[session_id] = DiagnosisSession(
                session_id=session_id, merchant_id=body.merchant_id
            )
        return {"session_id": session_id, "merchant_id": body.merchant_id}

    @app.post("/sessions/{session_id}/strategies", dependencies=[Depends(check_token)])
    async def set_strategies(session_id: str, body: StrategiesIn):
        session = get_session(session_id)
        scene = state.scenes[session.merchant_id]
        interventions = []
        for s in body.strategies:
            intervention = Intervention(
                edits=tuple((p, v) for p, v in s.edits), label=s.label
            )
            apply_intervention(scene, intervention)  # validate now, fail fast
            interventions.append(intervention)
        with state.lock:
            session.strategies = interventions
            session.results = [None] * len(interventions)
            session.expert_ranking = None
        return {
            "session_id": session_id,
            "strategies": [i.to_dict() for i in interventions],
        }

    @app.post("/sessions/{session_id}/simulate", dependencies=[Depends(check_token)])
    async def simulate_session(session_id: str, body: SimulateIn):
        session = get_session(session_id)
        if not session.strategies:
            raise IncompleteSession(
                f"session {session_id} has no strategies", stage="simulate"
            )
        seed = body.seed if body.seed is not None else secrets.randbits(31)
        scene = state.scenes[session.merchant_id]
        mixture = state.mixture_for(session.merchant_id)
        results = []
        for k, intervention in enumerate(session.strategies):
            estimate = simulate(
                registry=state.registry,
                mixture=mixture,
                scene=scene,
                intervention=intervention,
                model=state.model,
                backend=state.backend,
                n_draws=body.n,
                lam=body.lam,
                seed=seed + k,
                fcfg=state.fcfg,
            )
            results.append(estimate)
        with state.lock:
            session.results = results
            session.last_seed = seed
        return {
            "session_id": session_id,
            "seed": seed,
            "lambda": body.lam,
            "n": body.n,
            "results": [r.to_dict() for r in results],
        }

    @app.post("/sessions/{session_id}/expert-ranking", dependencies=[Depends(check_token)])
    async def expert_ranking(session_id: str, body: ExpertRankingIn):
        session = get_session(session_id)
        n = len(session.strategies)
        if sorted(body.ranking) != list(range(n)):
            raise InvariantViolation(
                f"ranking must be a permutation of 0..{n - 1}", stage="expert-ranking"
            )
        with state.lock:
            session.expert_ranking = list(body.ranking)
        return {"session_id": session_id, "expert_ranking": session.expert_ranking}

    @app.get("/sessions/{session_id}/ranking", dependencies=[Depends(check_token)])
    async def ranking(session_id: str):
        session = get_session(session_id)
        payload = rank_strategies(session)
        payload["session_id"] = session_id
        payload["seed"] = session.last_seed
        return payload

    @app.on_event("shutdown")
    async def snapshot_sessions():
        if state.snapshot_path:
            payload = {
                sid: {
                    "merchant_id": s.merchant_id,
                    "strategies": [i.to_dict() for i in s.strategies],
                    "results": [r.to_dict() if r else None for r in s.results],
                    "expert_ranking": s.expert_ranking,
                    "seed": s.last_seed,
                }
                for sid, s in state.sessions.items()
            }
            with open(state.snapshot_path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, indent=1)

    return app


def build_app_from_config(config: dict) -> FastAPI:
    return create_app(load_state(config))
