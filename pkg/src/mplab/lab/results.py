"""Result containers shared by the experiment runners and the report writer."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

__all__ = ["Assertion", "Table", "ExperimentResult", "map_rows"]


@dataclass
class Assertion:
    """One encoded claim with its measured value and the limit it was held to."""

    claim: str
    passed: bool
    value: float = math.nan
    limit: str = ""

    def row(self) -> dict:
        return {"claim": self.claim, "passed": str(bool(self.passed)).lower(),
                "value": repr(float(self.value)), "limit": self.limit}


@dataclass
class Table:
    """Named list of rows sharing ``columns``."""

    name: str
    columns: list
    rows: list = field(default_factory=list)

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]


@dataclass
class ExperimentResult:
    experiment: str
    scenario: object
    tables: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def check(self, claim: str, passed: bool, value: float = math.nan, limit: str = "") -> Assertion:
        a = Assertion(claim, bool(passed), float(value), limit)
        self.assertions.append(a)
        return a


def map_rows(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
