import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

from gttt.errors import BudgetExceededError, ValidationError

PROVENANCES = ("oracle", "llm")


@dataclass(frozen=True)
class AnnotationRecord:
    node_id: int
    pseudo_label: int
    confidence: float
    provenance: str
    raw_response: str | None = None
    retries: int = 0
    fallback: bool = False
    error: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 100.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 100]")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")

    @property
    def ok(self):
        return self.error is None

    def to_json(self):
        return asdict(self)


class BudgetLedger:
    """Thread-safe count of annotations spent against a budget.

    ``reserve`` is the only way to spend, and it never lets ``used``
    exceed ``budget``.
    """

    def __init__(self, budget):
        if budget < 0:
            raise ValidationError("budget must be >= 0")
        self.budget = int(budget)
        self._used = 0
        self._tokens = 0
        self._lock = threading.Lock()

    @property
    def used(self):
        return self._used

    @property
    def remaining(self):
        return self.budget - self._used

    @property
    def token_estimate(self):
        return self._tokens

    def try_reserve(self, n=1):
        with self._lock:
            if self._used + n > self.budget:
                return False
            self._used += n
            return True

    def reserve(self, n=1):
        if not self.try_reserve(n):
            raise BudgetExceededError(f"requested {n} annotations with {self.remaining} of {self.budget} left")

    def add_tokens(self, n):
        with self._lock:
            self._tokens += int(n)


def default_budget(test_size):
    """Ten percent of the test set, rounded down, at least one."""
    if test_size < 1:
        raise ValidationError("test_size must be >= 1")
    return max(1, int(test_size) // 10)


def append_records(path, records):
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_records(path):
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(AnnotationRecord(**json.loads(line)))
    return out
