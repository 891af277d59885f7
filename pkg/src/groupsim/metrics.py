"""Evaluation metrics: group simulation error, its spread, rank agreement."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Category, Tier
from .errors import EmptyInput, InvariantViolation, LengthMismatch, TooFewPairs


@dataclass(frozen=True)
class MerchantRatePair:
    merchant_id: str
    predicted_rate: float
    true_rate: float
    tier: Tier
    category: Category

    def __post_init__(self):
        for name, rate in (("predicted", self.predicted_rate), ("true", self.true_rate)):
            if not (0.0 <= rate <= 1.0):
                raise InvariantViolation(f"{name} rate {rate} outside [0, 1]")


def gse(pairs: Sequence[MerchantRatePair]) -> float:
    """Mean absolute error between predicted and true rates, in percent."""
    if not pairs:
        raise EmptyInput("gse requires at least one merchant pair")
    errors = np.array([abs(p.predicted_rate - p.true_rate) for p in pairs])
    return 100.0 * float(np.mean(errors))


def gse_sd(pairs: Sequence[MerchantRatePair]) -> float:
    """Population standard deviation of the absolute errors, in percent."""
    if len(pairs) < 2:
        raise TooFewPairs("gse_sd requires at least two merchant pairs")
    errors = np.array([abs(p.predicted_rate - p.true_rate) for p in pairs])
    return 100.0 * float(np.std(errors))


def kendall_tau(rank_a: Sequence[float], rank_b: Sequence[float]) -> float:
    """Kendall's tau between two tie-free rankings of the same items.

    Computed from the inversion count of b's ranks reordered by a's, using a
    merge-sort pass: tau = 1 - 4 * inversions / (n * (n - 1)).
    """
    if len(rank_a) != len(rank_b):
        raise LengthMismatch(f"rankings of length {len(rank_a)} vs {len(rank_b)}")
    n = len(rank_a)
    if n < 2:
        raise TooFewPairs("kendall_tau requires at least two items")
    if len(set(rank_a)) != n or len(set(rank_b)) != n:
        raise InvariantViolation("rankings must be tie-free")

    order = sorted(range(n), key=lambda i: rank_a[i])
    seq = [rank_b[i] for i in order]

    def count_inversions(arr: list[float]) -> tuple[list[float], int]:
        if len(arr) <= 1:
            return arr, 0
        mid = len(arr) // 2
        left, inv_l = count_inversions(arr[:mid])
        right, inv_r = count_inversions(arr[mid:])
        merged: list[float] = []
        inv = inv_l + inv_r
        i = j = 0
        while i < len(left) and j < len(right):
            if left[i] <= right[j]:
                merged.append(left[i])
                i += 1
            else:
                merged.append(right[j])
                j += 1
                inv += len(left) - i
        merged.extend(left[i:])
        merged.extend(right[j:])
        return merged, inv

    _, discordant = count_inversions(seq)
    total = n * (n - 1) // 2
    return (total - 2 * discordant) / total


def breakdown(pairs: Sequence[MerchantRatePair]) -> dict:
    """GSE by tier and by category; groups without members are omitted."""
    if not pairs:
        raise EmptyInput("breakdown requires at least one merchant pair")
    by_tier: dict[str, list[MerchantRatePair]] = {}
    by_category: dict[str, list[MerchantRatePair]] = {}
    for p in pairs:
        by_tier.setdefault(p.tier.value, []).append(p)
        by_category.setdefault(p.category.value, []).append(p)
    return {
        "tier": {
            t.value: {"gse": gse(by_tier[t.value]), "count": len(by_tier[t.value])}
            for t in Tier
            if t.value in by_tier
        },
        "category": {
            c.value: {"gse": gse(by_category[c.value]), "count": len(by_category[c.value])}
            for c in Category
            if c.value in by_category
        },
        "overall": {
            "gse": gse(pairs),
            "gse_sd": gse_sd(pairs) if len(pairs) >= 2 else 0.0,
            "count": len(pairs),
        },
    }


BREAKDOWN_COLUMNS = (
    ["label"]
    + [f"tier:{t.value}" for t in Tier]
    + [f"category:{c.value}" for c in Category]
    + ["gse", "gse_sd"]
)


def breakdown_csv(rows: Sequence[tuple[str, dict]]) -> str:
    """Render labeled breakdown tables as CSV, one row per label."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BREAKDOWN_COLUMNS)
    for label, table in rows:
        record = [label]
        for t in Tier:
            cell = table["tier"].get(t.value)
            record.append(f"{cell['gse']:.4f}" if cell else "")
        for c in Category:
            cell = table["category"].get(c.value)
            record.append(f"{cell['gse']:.4f}" if cell else "")
        record.append(f"{table['overall']['gse']:.4f}")
        record.append(f"{table['overall']['gse_sd']:.4f}")
        writer.writerow(record)
    return buf.getvalue()
