"""
Wilcoxon signed-rank test for paired per-image IoU series

Zero differences are dropped and tied magnitudes get average ranks. The
two-sided p-value is exact (full sign-assignment distribution) up to
EXACT_MAX_N nonzero pairs and uses the tie-corrected normal approximation
with continuity correction beyond that.
"""
from typing import List, Sequence, Tuple
import logging
import numpy as np
from scipy.stats import norm, rankdata

from ..config import settings
from ..exceptions import DegenerateTestError, EvaluationError
from ..schemas.report import WilcoxonResult

logger = logging.getLogger(__name__)

METHODS = ("auto", "exact", "approx")


def signed_ranks(a: Sequence[float], b: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(ranks of |a - b|, signs) over the nonzero differences"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError(f"paired series must be 1-D and of equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise EvaluationError("paired series are empty")
    diff = a - b
    diff = diff[diff != 0]
    if diff.size == 0:
        raise DegenerateTestError()
    return rankdata(np.abs(diff)), np.sign(diff)


def exact_null_counts(ranks: Sequence[float]) -> List[int]:
    """Number of sign assignments per value of 2*W+, built one rank at a time

    Average ranks are multiples of 1/2, so doubling makes every subset sum an
    integer and the distribution is exact in Python integers.
    """
    doubled = [int(round(2 * r)) for r in ranks]
    counts = [0] * (sum(doubled) + 1)
    counts[0] = 1
    reached = 0
    for r in doubled:
        for s in range(reached, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        reached += r
    return counts


def exact_p_value(ranks: Sequence[float], statistic: float) -> float:
    counts = exact_null_counts(ranks)
    limit = int(round(2 * statistic))
    tail = sum(counts[: limit + 1])
    return min(1.0, 2.0 * tail / 2 ** len(ranks))


def normal_p_value(ranks: Sequence[float], statistic: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(statistic - mean) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(z)))


def wilcoxon_signed_rank(
    a: Sequence[float],
    b: Sequence[float],
    alpha: float = None,
    method: str = "auto",
) -> WilcoxonResult:
    """
    Two-sided paired test of a against b
    Returns: WilcoxonResult with W = min(W+, W-)
    """
    if method not in METHODS:
        raise EvaluationError(f"unknown method {method!r}; expected one of {METHODS}")
    alpha = settings.SIGNIFICANCE_LEVEL if alpha is None else alpha

    ranks, signs = signed_ranks(a, b)
    n = int(ranks.size)
    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    statistic = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n <= settings.EXACT_MAX_N)
    if use_exact:
        p_value = exact_p_value(ranks, statistic)
    else:
        p_value = normal_p_value(ranks, statistic)

    result = WilcoxonResult(
        n_effective=n,
        statistic=statistic,
        w_plus=w_plus,
        w_minus=w_minus,
        p_value=p_value,
        method="exact" if use_exact else "normal-approximation",
        alpha=alpha,
        significant=p_value < alpha,
    )
    logger.debug(f"Wilcoxon n={n} W={statistic} p={p_value:.6g} ({result.method})")
    return result
