"""Simulated annotator that returns ground truth with a controlled error rate."""

import math
from dataclasses import dataclass

import numpy as np

from gttt.annotator.records import AnnotationRecord
from gttt.errors import ValidationError


@dataclass
class OracleConfig:
    accuracy: float = 1.0
    correct_conf: tuple = (70.0, 100.0)
    wrong_conf: tuple = (40.0, 90.0)
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError("oracle accuracy must be in [0, 1]")
        for lo, hi in (self.correct_conf, self.wrong_conf):
            if not 0.0 <= lo <= hi <= 100.0:
                raise ValidationError("confidence ranges need 0 <= lo <= hi <= 100")


def num_perturbed(accuracy, n):
    return int(math.floor((1.0 - accuracy) * n + 0.5 + 1e-9))


def annotate_oracle(nodes, labels_true, cfg, num_classes, ledger=None):
    """Label ``nodes`` with ground truth, flipping exactly ``round((1-a) n)`` of them.

    The flipped nodes are a prefix of a seeded permutation and every node's
    wrong label and confidence draw are fixed by the seed, so lowering the
    accuracy only adds flips on top of the ones a higher accuracy makes.
    """
    cfg.validate()
    nodes = np.asarray(nodes, dtype=np.int64)
    n = len(nodes)
    if ledger is not None:
        ledger.reserve(n)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    offsets = rng.integers(1, max(num_classes, 2), size=n)
    u = rng.random(n)

    truth = np.asarray(labels_true, dtype=np.int64)[nodes]
    wrong = np.zeros(n, dtype=bool)
    if num_classes > 1:
        wrong[order[:num_perturbed(cfg.accuracy, n)]] = True
    labels = np.where(wrong, (truth + offsets) % max(num_classes, 1), truth)
    lo = np.where(wrong, cfg.wrong_conf[0], cfg.correct_conf[0])
    hi = np.where(wrong, cfg.wrong_conf[1], cfg.correct_conf[1])
    conf = lo + u * (hi - lo)
    return [
        AnnotationRecord(int(v), int(y), float(c), "oracle")
        for v, y, c in zip(nodes, labels, conf)
    ]


class OracleAnnotator:
    """Binds ground truth, config and ledger behind ``annotate(nodes)``."""

    def __init__(self, labels_true, num_classes, cfg, ledger):
        self.labels_true = np.asarray(labels_true)
        self.num_classes = num_classes
        self.cfg = cfg
        self.ledger = ledger

    def annotate(self, nodes):
        return annotate_oracle(nodes, self.labels_true, self.cfg, self.num_classes, self.ledger)
