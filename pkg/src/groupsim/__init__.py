"""Group-level user behavior simulation with mined decision policies.

Pipeline: mine transferable decision policies from choice trajectories
(persona clustering + rationale refinement), predict with two branches
(policy-prompted reasoning and policy-conditioned boosted trees), and fuse
their Monte Carlo means into per-merchant counterfactual purchase rates.
"""

from .aggregate import estimate_mixture, simulate
from .backends import BackendConfig, RemoteBackend, StubBackend
from .clustering import hdbscan, kmeans
from .domain import (
    Category,
    DecisionPolicy,
    GroupEstimate,
    Intervention,
    PolicyMixture,
    PolicyRegistry,
    PolicyText,
    Scene,
    Tier,
    Trajectory,
    UserProfile,
    apply_intervention,
    select_high_intent,
)
from .encoder import Embedding, EncoderConfig, cosine, encode
from .fitting import BoostedModel, FeaturizerConfig, featurize, predict, train
from .metrics import MerchantRatePair, breakdown, gse, gse_sd, kendall_tau
from .mining import MiningConfig, MiningReport, assign_policy, mine
from .pipeline import ablate, chrono_split, run_experiment
from .reasoning import ReasonSample, reason
from .synthworld import WorldConfig, duality_config, generate, oracle_rate

__version__ = "0.1.0"

__all__ = [
    "ablate",
    "apply_intervention",
    "assign_policy",
    "BackendConfig",
    "BoostedModel",
    "breakdown",
    "Category",
    "chrono_split",
    "cosine",
    "DecisionPolicy",
    "duality_config",
    "Embedding",
    "encode",
    "EncoderConfig",
    "estimate_mixture",
    "FeaturizerConfig",
    "featurize",
    "generate",
    "GroupEstimate",
    "gse",
    "gse_sd",
    "hdbscan",
    "Intervention",
    "kendall_tau",
    "kmeans",
    "MerchantRatePair",
    "mine",
    "MiningConfig",
    "MiningReport",
    "oracle_rate",
    "PolicyMixture",
    "PolicyRegistry",
    "PolicyText",
    "predict",
    "reason",
    "ReasonSample",
    "RemoteBackend",
    "run_experiment",
    "Scene",
    "select_high_intent",
    "simulate",
    "StubBackend",
    "Tier",
    "train",
    "Trajectory",
    "UserProfile",
    "WorldConfig",
]
