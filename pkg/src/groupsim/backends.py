"""Generative backends for rationale writing, policy summaries, and decisions.

Two interchangeable implementations sit behind one interface:

* :class:`StubBackend` — deterministic rule templates. Rationales name the
  dominant profile attribute and its status against the scene; summaries pool
  the numeric limits quoted across rationales (median, so outliers wash out);
  decisions evaluate the summary's decision guide as a conjunction of
  ``field <= x`` / ``field >= x`` comparisons on scene fields.
* :class:`RemoteBackend` — a chat-completion HTTP client. Prompt templates
  live in ``prompts.json`` next to this module, versioned, not hard-coded.

The full pipeline runs end-to-end on the stub; the remote path exists for
plugging in a real model service.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from statistics import median
from typing import Protocol, Sequence

from .domain import PolicyText, Scene, Trajectory, UserProfile
from .errors import (
    EmptyCompletion,
    EmptyInput,
    InvariantViolation,
    ParseFailure,
    RemoteUnreachable,
    UnknownFieldPath,
    UnparseableDecision,
)

TOKEN_ENV_VAR = "GROUPSIM_API_TOKEN"


def load_prompts() -> dict:
    with resources.files(__package__).joinpath("prompts.json").open(encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class Rationale:
    """One textual explanation of one observed choice."""

    text: str
    outcome_explained: int
    source_trajectory: Trajectory

    def __post_init__(self):
        if not self.text:
            raise InvariantViolation("rationale text must be non-empty")
        if self.outcome_explained != self.source_trajectory.outcome:
            raise InvariantViolation("rationale explains a different outcome than observed")


class GenerativeBackend(Protocol):
    kind: str
    deterministic: bool

    def explain(
        self,
        user: UserProfile,
        scene: Scene,
        outcome: int,
        trajectory: Trajectory | None = None,
    ) -> Rationale: ...

    def summarize(self, rationales: Sequence[Rationale]) -> PolicyText: ...

    def decide(self, scene: Scene, instruction: PolicyText) -> int: ...


_GUIDE_CLAUSE = re.compile(r"^([a-z_][a-z0-9_]*)\s*(<=|>=)\s*(-?\d+(?:\.\d+)?)$")
_LIMIT = re.compile(r"(budget|floor) band [-\d.]+ limit (-?\d+(?:\.\d+)?)")


def parse_guide(guide: str) -> list[tuple[str, str, float]]:
    """Parse a decision guide into (field, comparator, threshold) clauses."""
    clauses = []
    for part in guide.lower().split(" and "):
        m = _GUIDE_CLAUSE.match(part.strip())
        if not m:
            raise UnparseableDecision(f"cannot parse guide clause {part.strip()!r}")
        clauses.append((m.group(1), m.group(2), float(m.group(3))))
    if not clauses:
        raise UnparseableDecision("empty decision guide")
    return clauses


def evaluate_guide(scene: Scene, guide: str) -> int:
    """Purchase iff every clause of the guide holds on the scene."""
    for field_name, op, threshold in parse_guide(guide):
        try:
            value = scene.numeric_field(field_name)
        except UnknownFieldPath as exc:
            raise UnparseableDecision(str(exc)) from exc
        ok = value <= threshold if op == "<=" else value >= threshold
        if not ok:
            return 0
    return 1


class StubBackend:
    """Deterministic template backend; pure function of inputs and seed."""

    kind = "stub"
    deterministic = True

    def __init__(self, seed: int = 0):
        self.seed = seed

    # -- rationale generation -------------------------------------------------

    def explain(
        self,
        user: UserProfile,
        scene: Scene,
        outcome: int,
        trajectory: Trajectory | None = None,
    ) -> Rationale:
        budget = user.get("budget")
        floor = user.get("min_rating")
        style = str(user.get("style", "habitual"))

        clauses = []
        dominant = "fit"
        best_margin = -1.0
        if budget is not None:
            b = float(budget)
            status = "over" if scene.price_tier > b else "within"
            # band anchors keep same-limit rationales textually close while
            # the exact limit stays available for pooled summaries
            clauses.append(f"price {status} budget band {5 * round(b / 5):d} limit {b:.1f}")
            margin = abs(scene.price_tier - b) / 10.0
            if margin > best_margin:
                best_margin, dominant = margin, "price"
        if floor is not None:
            f = float(floor)
            status = "under" if scene.rating < f else "meets"
            clauses.append(f"rating {status} floor band {round(f * 2) / 2:.1f} limit {f:.1f}")
            margin = abs(scene.rating - f)
            if margin > best_margin:
                best_margin, dominant = margin, "rating"
        if not clauses:
            clauses.append("no stated limits")

        action = "purchased" if outcome == 1 else "declined"
        verdict = "appealing" if outcome == 1 else "decisive"
        text = f"{style} patron {action}: {dominant} {verdict}; " + "; ".join(clauses)
        if trajectory is None:
            trajectory = Trajectory(
                user=user, scene=scene, outcome=outcome, timestamp=1, compared_merchants=2
            )
        return Rationale(text=text, outcome_explained=outcome, source_trajectory=trajectory)

    # -- policy summarization --------------------------------------------------

    def summarize(self, rationales: Sequence[Rationale]) -> PolicyText:
        if not rationales:
            raise EmptyInput("summarize requires at least one rationale")
        budgets: list[float] = []
        floors: list[float] = []
        dominants: Counter[str] = Counter()
        headers: Counter[str] = Counter()
        for r in rationales:
            for kind, value in _LIMIT.findall(r.text):
                (budgets if kind == "budget" else floors).append(float(value))
            m = re.search(r"(price|rating|fit) (?:appealing|decisive)", r.text)
            if m:
                dominants[m.group(1)] += 1
            head = r.text.split(" patron ", 1)[0]
            headers[head] += 1

        factors: list[str] = []
        for name in sorted(
            [n for n in ("price", "rating") if (budgets if n == "price" else floors)],
            key=lambda n: (-dominants[n], n),
        ):
            factors.append(name)
        if not factors:
            factors = ["overall fit"]

        clauses = []
        if budgets:
            clauses.append(f"price_tier <= {median(budgets):.1f}")
        if floors:
            clauses.append(f"rating >= {median(floors):.1f}")
        guide = " and ".join(clauses) if clauses else "rating >= 0.0"

        # mirror the profile serialization ("style: ...") so policy text and
        # member profiles share n-grams in the assignment space
        who = ", ".join(name for name, _ in headers.most_common(2))
        characteristics = f"style: {who} patrons"
        return PolicyText(
            user_characteristics=characteristics,
            key_decision_factors=tuple(factors),
            decision_guide=guide,
        )

    # -- decision --------------------------------------------------------------

    def decide(self, scene: Scene, instruction: PolicyText) -> int:
        return evaluate_guide(scene, instruction.decision_guide)


class RemoteBackend:
    """Chat-completion wire client with bounded retries and concurrency."""

    kind = "remote"
    deterministic = False

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        temperature: float = 0.7,
        max_retries: int = 2,
        timeout: float = 30.0,
        max_concurrency: int = 4,
        backoff: float = 0.5,
    ):
        if not endpoint or not model_name:
            raise InvariantViolation("remote backend requires endpoint and model_name")
        if temperature < 0:
            raise InvariantViolation("temperature must be >= 0")
        self.endpoint = endpoint
        self.model_name = model_name
        self.temperature = temperature
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff = backoff
        self._gate = threading.Semaphore(max_concurrency)
        self._prompts = load_prompts()

    def _complete(self, messages: list[dict]) -> str:
        import httpx

        headers = {}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": self.model_name,
            "messages": messages,
            "temperature": self.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = httpx.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout
                    )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                if not content or not content.strip():
                    raise EmptyCompletion("backend returned an empty completion")
                return content.strip()
            except EmptyCompletion:
                raise
            except Exception as exc:  # noqa: BLE001 - network/protocol failures retry
                last_error = exc
        raise RemoteUnreachable(
            f"{self.endpoint} unreachable after {self.max_retries + 1} attempts: {last_error}"
        )

    def explain(
        self,
        user: UserProfile,
        scene: Scene,
        outcome: int,
        trajectory: Trajectory | None = None,
    ) -> Rationale:
        prompt = self._prompts["explain"].format(
            profile=user.serialized_text,
            scene=scene.serialized_text,
            action="purchased" if outcome == 1 else "did not purchase",
        )
        text = self._complete([{"role": "user", "content": prompt}])
        if trajectory is None:
            trajectory = Trajectory(
                user=user, scene=scene, outcome=outcome, timestamp=1, compared_merchants=2
            )
        return Rationale(text=text, outcome_explained=outcome, source_trajectory=trajectory)

    def summarize(self, rationales: Sequence[Rationale]) -> PolicyText:
        if not rationales:
            raise EmptyInput("summarize requires at least one rationale")
        prompt = self._prompts["summarize"].format(
            rationales="\n".join(f"- {r.text}" for r in rationales)
        )
        text = self._complete([{"role": "user", "content": prompt}])
        fields: dict[str, str] = {}
        for line in text.splitlines():
            if ":" in line:
                key, _, value = line.partition(":")
                fields[key.strip().lower()] = value.strip()
        try:
            return PolicyText(
                user_characteristics=fields["user characteristics"],
                key_decision_factors=tuple(
                    f.strip() for f in fields["key decision factors"].split(",") if f.strip()
                ),
                decision_guide=fields["decision guide"],
            )
        except (KeyError, InvariantViolation) as exc:
            raise ParseFailure(f"summary missing structured fields: {text!r}") from exc

    def decide(self, scene: Scene, instruction: PolicyText) -> int:
        system = self._prompts["decide_system"].format(
            user_characteristics=instruction.user_characteristics,
            key_decision_factors=", ".join(instruction.key_decision_factors),
            decision_guide=instruction.decision_guide,
        )
        user = self._prompts["decide_user"].format(scene=scene.serialized_text)
        text = self._complete(
            [{"role": "system", "content": system}, {"role": "user", "content": user}]
        )
        first = re.split(r"\W+", text.strip().lower(), maxsplit=1)[0]
        if first == "yes":
            return 1
        if first == "no":
            return 0
        raise UnparseableDecision(f"expected yes/no, got {text!r}")


@dataclass(frozen=True)
class BackendConfig:
    """Declarative backend selection, serializable into pipeline configs."""

    kind: str = "stub"
    seed: int = 0
    endpoint: str | None = None
    model_name: str | None = None
    temperature: float = 0.7
    max_retries: int = 2

    def build(self) -> GenerativeBackend:
        if self.kind == "stub":
            return StubBackend(seed=self.seed)
        if self.kind == "remote":
            if not (self.endpoint and self.model_name):
                raise InvariantViolation("remote backend requires endpoint and model_name")
            return RemoteBackend(
                endpoint=self.endpoint,
                model_name=self.model_name,
                temperature=self.temperature,
                max_retries=self.max_retries,
            )
        raise InvariantViolation(f"unknown backend kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "endpoint": self.endpoint,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        return cls(
            kind=d.get("kind", "stub"),
            seed=int(d.get("seed", 0)),
            endpoint=d.get("endpoint"),
            model_name=d.get("model_name"),
            temperature=float(d.get("temperature", 0.7)),
            max_retries=int(d.get("max_retries", 2)),
        )
