import logging
import math
from dataclasses import dataclass
from typing import Optional

from .common import UnboundedError
from .economics import DEFAULT_D, DEFAULT_DELTA, opportunity_cost, timeout_schedule
from .util import bisect

logger = logging.getLogger(__name__)

# k_max bisection
KMAX_RTOL = 1e-9
KMAX_MAX_ITER = 200

@dataclass(frozen=True)
class PenaltyParams:
    """Griefing-penalty settings of one protocol run.

    Plain HTLC-GP only sets `gamma`. The guaranteed-compensation variant
    also fixes `zeta`, `k` and the path-length cap `n_max` derived from them.
    """

    gamma: float
    zeta:  float           = 0.0
    k:     Optional[float] = None
    n_max: Optional[int]   = None
    h:     Optional[float] = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must lie in [0, 1)")
        if self.zeta > 0 and self.gamma <= 0:
            raise ValueError("gamma must be positive when zeta > 0")
        if self.k is not None and self.k <= 0:
            raise ValueError("k must be positive")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.h is not None and not 0 <= self.h <= 1:
            raise ValueError("h must lie in [0, 1]")

    @property
    def guaranteed(self):
        return self.zeta > 0

    @staticmethod
    def plain(gamma):
        return PenaltyParams(gamma=gamma)

    @staticmethod
    def for_guarantee(k, zeta, D=DEFAULT_D, delta=DEFAULT_DELTA, h=None):
        return PenaltyParams(
            gamma=penalty_rate(k, zeta, D, delta),
            zeta=zeta,
            k=k,
            n_max=max_path_length(k, zeta),
            h=h,
        )

def cumulative_penalty(amounts, timeouts, gamma, i):
    """Penalty Z accumulated over the first i hops: gamma * sum(a_j t_j), j < i."""
    if not 1 <= i <= len(amounts):
        raise ValueError("hop index out of range")
    return gamma * math.fsum(amounts[j] * timeouts[j] for j in range(i))

def compensation(amounts, timeouts, gamma, i):
    """What the payer of hop i keeps on grief once it has paid its upstream neighbour."""
    return gamma * amounts[i] * timeouts[i]

def max_path_length(k, zeta):
    if zeta == 0:
        raise UnboundedError("path length is unbounded when zeta = 0")
    if zeta < 0 or k <= 0:
        raise ValueError("k and zeta must be positive")
    # k/zeta is often a float hair below an integer
    return int(math.floor(k / zeta * (1 + 1e-12)))

def penalty_rate(k, zeta, D=DEFAULT_D, delta=DEFAULT_DELTA):
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    if k < zeta:
        raise ValueError("k must be at least zeta")
    if D <= 0:
        raise ValueError("D must be positive")
    denominator = 2 * zeta * D + delta * (k - zeta)
    if denominator <= 0:
        raise ValueError("degenerate penalty-rate denominator")
    return 2 * zeta * zeta / denominator

def penalty_rate_summation(k, n_max, D=DEFAULT_D, delta=DEFAULT_DELTA):
    """The rate before substituting n_max = k/zeta: k over the n_max-hop timeout sum."""
    return k / timeout_schedule(n_max, D, delta).total

def participation_profit(k, h, alpha, economics, D=DEFAULT_D, remain=0, t_tilde=0):
    """Expected profit of a payee that joins the game with maximum penalty ratio k."""
    r = economics.rate
    losses = (k * alpha
              + opportunity_cost(r, D, k * alpha, economics)
              + opportunity_cost(r, D, alpha, economics)
              + opportunity_cost(r, t_tilde, remain, economics))
    return h * alpha - (1 - h) * losses

def max_penalty_ratio(h, alpha, economics, D=DEFAULT_D, remain=0, t_tilde=0):
    if h == 1:
        raise UnboundedError("k_max is unbounded when the payee is always live")
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def g(k):
        return participation_profit(k, h, alpha, economics, D, remain, t_tilde)

    if g(0) < 0:
        logger.debug("payee participation infeasible even at k=0")
        return 0.0

    # the k*alpha term alone exceeds h*alpha here
    hi = h / (1 - h) + 1
    return bisect(g, 0.0, hi, rtol=KMAX_RTOL, max_iter=KMAX_MAX_ITER)

def attack_payment_value(alpha, gamma, timeouts):
    """Self-payment value v such that v plus the penalty it requires spends alpha."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return alpha / (1 + gamma * sum(timeouts))
