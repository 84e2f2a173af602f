"""Numeric versions of the domain-adaptation bounds for labeled test-time training.

Two domains are indexed 0 (source) and 1 (test). All logarithms are natural.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from gttt.errors import ValidationError


@dataclass
class FiniteHypothesisClass:
    """Binary hypotheses given as label vectors over a finite domain."""

    hypotheses: np.ndarray
    vc_dim: int = 1

    def __post_init__(self):
        h = np.asarray(self.hypotheses)
        if h.ndim != 2 or h.shape[0] == 0:
            raise ValidationError("need a nonempty (num_hypotheses, domain_size) array")
        if not np.isin(h, (0, 1)).all():
            raise ValidationError("hypotheses must be 0/1 valued")
        self.hypotheses = h.astype(np.int8)


def empirical_hdh_distance(hc, s1, s2):
    """``2 * max_{h,h'} |P_S1[h != h'] - P_S2[h != h']|`` by exhaustive pair search."""
    s1, s2 = np.asarray(s1, dtype=np.int64), np.asarray(s2, dtype=np.int64)
    if len(s1) == 0 or len(s2) == 0:
        raise ValidationError("samples must be nonempty")
    h = hc.hypotheses
    if max(s1.max(), s2.max()) >= h.shape[1] or min(s1.min(), s2.min()) < 0:
        raise ValidationError("sample index outside the hypothesis domain")
    # disagreement rate of every pair on each sample, shape (H, H)
    a1, a2 = h[:, s1].astype(np.float64), h[:, s2].astype(np.float64)
    d1 = (a1 @ (1 - a1).T + (1 - a1) @ a1.T) / len(s1)
    d2 = (a2 @ (1 - a2).T + (1 - a2) @ a2.T) / len(s2)
    return float(2.0 * np.abs(d1 - d2).max())


@dataclass
class BoundInputs:
    dhat: float
    m: int
    d: int
    delta: float
    eps_joint: float
    omega: tuple
    lam: tuple
    N: int

    def validate(self):
        if self.dhat < 0 or self.eps_joint < 0:
            raise ValidationError("dhat and eps_joint must be >= 0")
        if self.m < 1 or self.N < 1 or self.d < 0:
            raise ValidationError("m, N must be >= 1 and d >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must be in (0, 1)")
        for name in ("omega", "lam"):
            v = getattr(self, name)
            if len(v) != 2 or min(v) < 0 or abs(sum(v) - 1.0) > 1e-9:
                raise ValidationError(f"{name} must be a 2-vector on the simplex")
        for w, l in zip(self.omega, self.lam):
            if l == 0 and w != 0:
                raise ValidationError("a domain with nonzero weight needs a nonzero sample ratio")


def weighted_ratio_sum(omega, lam):
    """``sum_j omega_j^2 / lambda_j`` (terms with zero weight contribute 0)."""
    total = 0.0
    for w, l in zip(omega, lam):
        if w == 0:
            continue
        if l == 0:
            raise ValidationError("a domain with nonzero weight needs a nonzero sample ratio")
        total += w * w / l
    return total


def sample_complexity_term(b):
    return 4.0 * math.sqrt((2 * b.d * math.log(2 * b.m) + math.log(2.0 / b.delta)) / b.m)


def constant_c(b):
    return 2.0 * math.sqrt(
        weighted_ratio_sum(b.omega, b.lam) * (b.d * math.log(2 * b.N) - math.log(b.delta)) / (2 * b.N)
    )


def theorem1_bound(b, j=1):
    """Upper bound on ``e_j(h_hat) - e_j(h_j*)`` for the weighted-error minimizer."""
    b.validate()
    cross = sum(
        b.omega[i] * (b.dhat + sample_complexity_term(b) + b.eps_joint)
        for i in range(2) if i != j
    )
    return cross + constant_c(b)


def divergence_term(b):
    """``A`` of the compact test-domain bound."""
    return b.dhat + sample_complexity_term(b) + b.eps_joint


def empirical_gap_term(b):
    """``M`` of the compact test-domain bound."""
    return 2.0 * math.sqrt((b.d * math.log(2 * b.N) - math.log(b.delta)) / (2 * b.N))


def weight_radical(omega0, lam0):
    return math.sqrt(omega0 ** 2 / lam0 + (1.0 - omega0) ** 2 / (1.0 - lam0))


def test_domain_bound(A, M, omega0, lam0):
    """``omega0 * A + sqrt(omega0^2/lam0 + (1-omega0)^2/(1-lam0)) * M``."""
    if A < 0 or M < 0:
        raise ValidationError("A and M must be >= 0")
    if not 0.0 <= omega0 <= 1.0:
        raise ValidationError("omega0 must be in [0, 1]")
    if not 0.0 < lam0 < 1.0:
        raise ValidationError("lam0 must be in (0, 1); the unlabeled corner is A + M")
    return omega0 * A + weight_radical(omega0, lam0) * M


def omega_grid(lam0, grid):
    g = np.linspace(0.0, 1.0, int(grid))
    return np.unique(np.append(g, lam0))


def theorem2_check(A, M, lam0, grid=101):
    """Compare the best weighted bound on a grid with the no-test-labels value ``A + M``.

    Returns ``(min_bound, ftt_bound, holds)``; the grid always contains
    ``omega0 = lam0``.
    """
    if grid < 2:
        raise ValidationError("grid must have at least 2 points")
    if A <= 0 or M <= 0:
        raise ValidationError("A and M must be > 0")
    vals = [test_domain_bound(A, M, w, lam0) for w in omega_grid(lam0, grid)]
    best, ftt = min(vals), A + M
    return best, ftt, bool(best < ftt)


def hoeffding_bound(omega, lam, N, eps):
    """``2 exp(-2 N eps^2 / sum_j omega_j^2/lambda_j)``."""
    return 2.0 * math.exp(-2.0 * N * eps * eps / weighted_ratio_sum(omega, lam))


def eps_for_bound(omega, lam, N, target):
    """Deviation at which the Hoeffding bound equals ``target``."""
    return math.sqrt(math.log(2.0 / target) * weighted_ratio_sum(omega, lam) / (2.0 * N))


def lemma2_montecarlo(omega, lam, N, bound_eps, trials, seed, true_errors=(0.3, 0.1)):
    """Fraction of trials where ``|e_w - e_hat_w| >= bound_eps``.

    Each trial draws ``lambda_j * N`` Bernoulli(true_errors[j]) losses per
    domain and forms the weighted empirical error.
    """
    if trials < 1000:
        raise ValidationError("use at least 1000 trials")
    counts = [int(round(l * N)) for l in lam]
    if sum(counts) != N:
        raise ValidationError("lambda * N must give integer per-domain counts")
    weighted_ratio_sum(omega, lam)
    rng = np.random.default_rng(seed)
    e_true = sum(w * e for w, e in zip(omega, true_errors))
    e_hat = np.zeros(trials)
    for w, n_j, e in zip(omega, counts, true_errors):
        if n_j == 0:
            continue
        e_hat += w * rng.binomial(n_j, e, size=trials) / n_j
    return float(np.mean(np.abs(e_hat - e_true) >= bound_eps))


def bound_report(b, grid=101):
    """JSON-ready summary: joint-weight bound, test-domain curve and the weighted versus unlabeled comparison."""
    b.validate()
    A, M, lam0 = divergence_term(b), empirical_gap_term(b), b.lam[0]
    if not 0.0 < lam0 < 1.0:
        raise ValidationError("lam[0] must be in (0, 1) for the test-domain comparison")
    curve = [[float(w), test_domain_bound(A, M, float(w), lam0)] for w in np.linspace(0.0, 1.0, int(grid))]
    best, ftt, holds = theorem2_check(A, M, lam0, grid)
    return {
        "inputs": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(b).items()},
        "theorem1": theorem1_bound(b),
        "A": A,
        "M": M,
        "test_domain_curve": curve,
        "theorem2": {"min": best, "ftt": ftt, "holds": holds},
    }


test_domain_bound.__test__ = False  # not a pytest test despite the name
