"""Semantic reasoning branch: policy-prompted binary decision on a scene."""

from __future__ import annotations

from dataclasses import dataclass

from .backends import GenerativeBackend
from .domain import PolicyRegistry, Scene
from .errors import InvariantViolation


@dataclass(frozen=True)
class ReasonSample:
    policy_index: int
    decision: int
    backend_kind: str

    def __post_init__(self):
        if self.decision not in (0, 1):
            raise InvariantViolation(f"decision must be 0 or 1, got {self.decision}")


def reason(
    backend: GenerativeBackend,
    registry: PolicyRegistry,
    policy_index: int,
    scene: Scene,
) -> ReasonSample:
    """Decide purchase/no-purchase for a scene under one policy's instruction."""
    if not (0 <= policy_index < len(registry)):
        raise InvariantViolation(
            f"policy index {policy_index} out of range [0, {len(registry)})"
        )
    instruction = registry.policies[policy_index].instruction
    decision = backend.decide(scene, instruction)
    return ReasonSample(
        policy_index=policy_index, decision=decision, backend_kind=backend.kind
    )
