"""End-to-end orchestration: split, mine, train, simulate, evaluate, ablate.

A single JSON config drives everything::

    {
      "data":        {"trajectories": ..., "visitor_logs": ..., "latent_truth": ...,
                      "output_dir": ...},
      "backend":     {"kind": "stub", "seed": 0},
      "mining":      {"k": 3, "min_cluster_size": 5, "variant": "full", "seed": 0,
                      "encoder": {"dimension": 256, "ngram_range": [1, 2], "seed": 0}},
      "fitting":     {"rounds": 200, "learning_rate": 0.1, "max_depth": 3, "l2": 1.0},
      "aggregation": {"n_draws": 1000, "lambda": 0.5, "seed": 0},
      "evaluation":  {"min_compared": 2, "split_fraction": 0.2}
    }

Stages communicate through files under ``output_dir``; reports contain no
wall-clock values, so identical configs reproduce byte-identical artifacts.
When ``latent_truth`` is present, ground-truth rates come from the synthetic
world's closed-form oracle; otherwise from empirical test-set rates.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aggregate import estimate_mixture, simulate
from .backends import BackendConfig, GenerativeBackend
from .domain import (
    PolicyMixture,
    PolicyRegistry,
    PolicyText,
    Scene,
    Trajectory,
    read_trajectories,
    select_high_intent,
)
from .encoder import EncoderConfig, encode
from .errors import EmptyInput, GroupSimError, InvariantViolation, StageError
from .fitting import BoostedModel, FeaturizerConfig, featurize, train
from .metrics import MerchantRatePair, breakdown, breakdown_csv, gse, gse_sd
from .mining import MiningConfig, assign_policy, mine
from .synthworld import oracle_rate, true_mixture

GENERIC_INSTRUCTION = PolicyText(
    user_characteristics="general population, no mined segment",
    key_decision_factors=("overall fit",),
    decision_guide="rating >= 4.0",
)


def chrono_split(
    trajectories: list[Trajectory], fraction: float
) -> tuple[list[Trajectory], list[Trajectory]]:
    """First ceil(fraction*n) trajectories by timestamp (stable on ties)."""
    if not trajectories:
        raise EmptyInput("cannot split an empty trajectory list")
    if not (0.0 < fraction < 1.0):
        raise InvariantViolation(f"split fraction must lie in (0, 1), got {fraction}")
    ordered = sorted(trajectories, key=lambda t: t.timestamp)
    cut = math.ceil(fraction * len(ordered))
    return ordered[:cut], ordered[cut:]


def config_digest(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True)
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


def _merchant_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=(base, index)).generate_state(1)[0])


@dataclass
class _Prepared:
    """Data loaded and split once, shared across ablation variants."""

    mining_set: list[Trajectory]
    test_set: list[Trajectory]
    visitor_logs: dict[str, list[str]]
    profiles: dict[str, object]
    truth: dict | None


class ExperimentRunner:
    """Executes pipeline stages for one config, with stage attribution."""

    def __init__(self, config: dict, backend: GenerativeBackend | None = None):
        self.config = config
        self.digest = config_digest(config)
        self.backend = backend or BackendConfig.from_dict(config.get("backend", {})).build()
        self.mining_cfg = MiningConfig.from_dict(config.get("mining", {}))
        self.encoder_cfg = self.mining_cfg.encoder
        self.fcfg = FeaturizerConfig(embedding_dim=self.encoder_cfg.dimension)
        fit = config.get("fitting", {})
        self.fit_hyper = dict(
            rounds=int(fit.get("rounds", 200)),
            learning_rate=float(fit.get("learning_rate", 0.1)),
            max_depth=int(fit.get("max_depth", 3)),
            l2=float(fit.get("l2", 1.0)),
            seed=int(fit.get("seed", 0)),
        )
        agg = config.get("aggregation", {})
        self.n_draws = int(agg.get("n_draws", 1000))
        self.lam = float(agg.get("lambda", 0.5))
        self.agg_seed = int(agg.get("seed", 0))
        self.stratified = bool(agg.get("stratified", False))
        ev = config.get("evaluation", {})
        self.min_compared = int(ev.get("min_compared", 2))
        self.split_fraction = float(ev.get("split_fraction", 0.2))
        self._embedding_cache: dict[str, object] = {}

    # -- stages ---------------------------------------------------------------

    def _stage(self, name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    def prepare(self) -> _Prepared:
        data = self.config.get("data", {})
        path = data.get("trajectories")
        if not path or not os.path.exists(path):
            raise StageError("load-data", FileNotFoundError(f"trajectory file {path!r}"))
        raw = self._stage("load-data", read_trajectories, path)

        truth = None
        truth_path = data.get("latent_truth")
        if truth_path:
            if not os.path.exists(truth_path):
                raise StageError("load-truth", FileNotFoundError(truth_path))
            with open(truth_path, encoding="utf-8") as fh:
                truth = json.load(fh)

        logs_path = data.get("visitor_logs")
        if logs_path:
            if not os.path.exists(logs_path):
                raise StageError("load-visitors", FileNotFoundError(logs_path))
            with open(logs_path, encoding="utf-8") as fh:
                visitor_logs = json.load(fh)
        else:
            visitor_logs = {}
            seen: dict[str, set] = {}
            for t in raw:
                mid = t.scene.merchant_id
                if t.user.user_id not in seen.setdefault(mid, set()):
                    seen[mid].add(t.user.user_id)
                    visitor_logs.setdefault(mid, []).append(t.user.user_id)

        filtered = self._stage("filter", select_high_intent, raw, self.min_compared)
        mining_set, test_set = self._stage("split", chrono_split, filtered, self.split_fraction)
        profiles = {}
        for t in raw:
            profiles.setdefault(t.user.user_id, t.user)
        return _Prepared(
            mining_set=mining_set,
            test_set=test_set,
            visitor_logs=visitor_logs,
            profiles=profiles,
            truth=truth,
        )

    def _embed(self, profile) -> object:
        cached = self._embedding_cache.get(profile.user_id)
        if cached is None:
            cached = encode(profile.serialized_text, self.encoder_cfg)
            self._embedding_cache[profile.user_id] = cached
        return cached

    def mine_policies(self, prepared: _Prepared, variant: str | None = None):
        cfg = self.mining_cfg
        if variant is not None and variant != cfg.variant:
            cfg = MiningConfig.from_dict({**cfg.to_dict(), "variant": variant})
        return self._stage("mine", mine, prepared.mining_set, cfg, self.backend)

    def train_model(
        self,
        prepared: _Prepared,
        registry: PolicyRegistry,
        with_policy: bool = True,
    ) -> BoostedModel:
        def build() -> BoostedModel:
            zero = np.zeros(self.encoder_cfg.dimension)
            rows = np.empty((len(prepared.mining_set), self.fcfg.total_dim))
            labels = np.empty(len(prepared.mining_set))
            for i, t in enumerate(prepared.mining_set):
                emb = self._embed(t.user)
                if with_policy:
                    vec = registry.policies[assign_policy(registry, emb)].vector
                else:
                    vec = zero
                rows[i] = featurize(t.scene, emb.values, vec, self.fcfg)
                labels[i] = t.outcome
            return train(rows, labels, self.fcfg, **self.fit_hyper)

        return self._stage("train", build)

    def evaluate(
        self,
        prepared: _Prepared,
        registry: PolicyRegistry,
        model: BoostedModel,
        with_policy: bool = True,
    ) -> dict:
        def run() -> dict:
            scenes: dict[str, Scene] = {}
            for t in prepared.test_set:
                scenes.setdefault(t.scene.merchant_id, t.scene)
            merchant_ids = sorted(scenes)
            if not merchant_ids:
                raise EmptyInput("test split contains no merchants")

            empirical: dict[str, list[int]] = {m: [] for m in merchant_ids}
            for t in prepared.test_set:
                empirical[t.scene.merchant_id].append(t.outcome)

            reg = registry
            if not with_policy:
                generic = tuple(
                    type(p)(
                        persona_id=p.persona_id,
                        subgroup_id=p.subgroup_id,
                        instruction=GENERIC_INSTRUCTION,
                        vector=p.vector,
                        support=p.support,
                    )
                    for p in registry.policies
                )
                reg = PolicyRegistry(
                    policies=generic,
                    encoder_fingerprint=registry.encoder_fingerprint,
                    mined_at=registry.mined_at,
                )

            def one(args: tuple[int, str]) -> dict:
                idx, mid = args
                scene = scenes[mid]
                visitors = [
                    prepared.profiles[uid]
                    for uid in prepared.visitor_logs.get(mid, [])
                    if uid in prepared.profiles
                ]
                mixture = estimate_mixture(
                    reg, visitors, mid, self.encoder_cfg, self._embedding_cache
                )
                if not with_policy:
                    uniform = 1.0 / len(reg)
                    mixture = PolicyMixture(
                        scene_id=mid,
                        weights=tuple((i, uniform) for i in range(len(reg))),
                        member_embeddings=mixture.member_embeddings,
                    )
                zero_vec = np.zeros(self.encoder_cfg.dimension)
                est = simulate(
                    registry=reg,
                    mixture=mixture,
                    scene=scene,
                    intervention=None,
                    model=model,
                    backend=self.backend,
                    n_draws=self.n_draws,
                    lam=self.lam,
                    seed=_merchant_seed(self.agg_seed, idx),
                    fcfg=self.fcfg,
                    stratified=self.stratified,
                    policy_vector_override=None if with_policy else zero_vec,
                )
                if prepared.truth is not None:
                    visitors_ids = prepared.visitor_logs.get(mid, [])
                    mix_truth = true_mixture(prepared.truth, visitors_ids)
                    truth_rate = oracle_rate(prepared.truth, scene, None, mix_truth)
                else:
                    outcomes = empirical[mid]
                    truth_rate = sum(outcomes) / len(outcomes) if outcomes else 0.0
                return {
                    "merchant_id": mid,
                    "tier": scene.tier.value,
                    "category": scene.category.value,
                    "predicted": est.hybrid_rate,
                    "reason_mean": est.reason_mean,
                    "fit_mean": est.fit_mean,
                    "true_rate": truth_rate,
                    "samples": est.samples,
                }

            with ThreadPoolExecutor(max_workers=4) as pool:
                rows = list(pool.map(one, enumerate(merchant_ids)))
            rows.sort(key=lambda r: r["merchant_id"])

            def pairs(prediction_key: str) -> list[MerchantRatePair]:
                return [
                    MerchantRatePair(
                        merchant_id=r["merchant_id"],
                        predicted_rate=min(1.0, max(0.0, r[prediction_key])),
                        true_rate=min(1.0, max(0.0, r["true_rate"])),
                        tier=scenes[r["merchant_id"]].tier,
                        category=scenes[r["merchant_id"]].category,
                    )
                    for r in rows
                ]

            hybrid_pairs = pairs("predicted")
            report = {
                "config_digest": self.digest,
                "lambda": self.lam,
                "n_draws": self.n_draws,
                "seed": self.agg_seed,
                "with_policy": with_policy,
                "gse": gse(hybrid_pairs),
                "gse_sd": gse_sd(hybrid_pairs) if len(hybrid_pairs) >= 2 else 0.0,
                "branch_gse": {
                    "reason": gse(pairs("reason_mean")),
                    "fit": gse(pairs("fit_mean")),
                },
                "breakdown": breakdown(hybrid_pairs),
                "merchants": rows,
            }
            return report

        return self._stage("evaluate", run)


def run_experiment(config: dict, write_artifacts: bool = True) -> dict:
    """Full pipeline: mine, train, simulate each test merchant, evaluate."""
    runner = ExperimentRunner(config)
    prepared = runner.prepare()
    registry, mining_report = runner.mine_policies(prepared)
    model = runner.train_model(prepared, registry)
    report = runner.evaluate(prepared, registry, model)
    report["mining"] = mining_report.to_dict()

    if write_artifacts:
        out_dir = config.get("data", {}).get("output_dir")
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            _dump(os.path.join(out_dir, "registry.json"), _with_meta(registry.to_dict(), runner))
            _dump(os.path.join(out_dir, "model.json"), _with_meta(model.to_dict(), runner))
            _dump(os.path.join(out_dir, "report.json"), report)
            table = breakdown_csv([("run", report["breakdown"])])
            with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
                fh.write(table)
    return report


def _with_meta(d: dict, runner: ExperimentRunner) -> dict:
    return {"config_digest": runner.digest, "seed": runner.agg_seed, **d}


def _dump(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def ablate(config: dict) -> dict:
    """The ablation grid: branch/policy variants plus mining variants.

    Six rows isolate policy guidance and fusion ({reason, fit, fusion} x
    {with, without policy}); three more compare mining variants under full
    fusion. Single-branch rows reuse the fused run's per-branch means, which
    equals rerunning with lambda pinned to 1 or 0.
    """
    runner = ExperimentRunner(config)
    prepared = runner.prepare()

    registry, _ = runner.mine_policies(prepared, variant="full")
    model_with = runner.train_model(prepared, registry, with_policy=True)
    model_without = runner.train_model(prepared, registry, with_policy=False)

    with_report = runner.evaluate(prepared, registry, model_with, with_policy=True)
    without_report = runner.evaluate(prepared, registry, model_without, with_policy=False)

    rows: list[dict] = []

    def branch_rows(report: dict, suffix: str) -> None:
        rows.append(
            {
                "label": f"reason_{suffix}",
                "lambda": 1.0,
                "gse": report["branch_gse"]["reason"],
            }
        )
        rows.append(
            {"label": f"fit_{suffix}", "lambda": 0.0, "gse": report["branch_gse"]["fit"]}
        )
        rows.append(
            {
                "label": f"fusion_{suffix}",
                "lambda": report["lambda"],
                "gse": report["gse"],
                "gse_sd": report["gse_sd"],
            }
        )

    branch_rows(without_report, "no_policy")
    branch_rows(with_report, "with_policy")

    mining_rows = [
        {
            "label": "mining_full",
            "lambda": with_report["lambda"],
            "gse": with_report["gse"],
            "gse_sd": with_report["gse_sd"],
        }
    ]
    for variant in ("kmeans_only", "no_clustering"):
        reg_v, _ = runner.mine_policies(prepared, variant=variant)
        model_v = runner.train_model(prepared, reg_v, with_policy=True)
        rep_v = runner.evaluate(prepared, reg_v, model_v, with_policy=True)
        mining_rows.append(
            {
                "label": f"mining_{variant}",
                "lambda": rep_v["lambda"],
                "gse": rep_v["gse"],
                "gse_sd": rep_v["gse_sd"],
            }
        )
    rows.extend(mining_rows)

    table = {
        "config_digest": runner.digest,
        "rows": rows,
        "reports": {
            "with_policy": with_report,
            "no_policy": without_report,
        },
    }
    out_dir = config.get("data", {}).get("output_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _dump(os.path.join(out_dir, "ablation.json"), table)
    return table
