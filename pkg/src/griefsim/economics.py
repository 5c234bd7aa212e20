import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

from .util import round_half_up

logger = logging.getLogger(__name__)

DEFAULT_D = 100
DEFAULT_DELTA = 100

# E(X) summation stops once the remaining tail is below this share of the total
TAIL_EPSILON = 1e-17

@dataclass(frozen=True)
class EconomicParams:
    """Fee policy and opportunity-cost inputs shared by every node.

    `rate` is the arrival rate of unit transactions per block, `mining_fee`
    the fixed on-chain cost M paid by whoever broadcasts a closure.
    """

    base_fee:   float = 1.0     # satoshi
    fee_rate:   float = 1e-6    # proportional
    per_tx_val: float = 1000.0  # satoshi
    mining_fee: int   = 154     # satoshi
    rate:       float = 0.0003  # transactions per block

    def __post_init__(self):
        for name in ("base_fee", "fee_rate", "per_tx_val", "mining_fee", "rate"):
            if getattr(self, name) < 0:
                raise ValueError(name + " must be non-negative")
        if self.per_tx_val <= 0:
            raise ValueError("per_tx_val must be positive")

    @property
    def unit_fee(self):
        """Fee earned on one transaction of size per_tx_val."""
        return self.base_fee + self.fee_rate * self.per_tx_val

@dataclass(frozen=True)
class TimeoutSchedule:
    D:        int
    delta:    int
    timeouts: Tuple[int, ...]   # t_0 ... t_{kappa-1}

    @property
    def kappa(self):
        return len(self.timeouts)

    @property
    def total(self):
        return sum(self.timeouts)

    def expiry(self, i, formed_at):
        return formed_at + self.timeouts[i]

    def __iter__(self):
        return iter(self.timeouts)

    def __len__(self):
        return len(self.timeouts)

    def __getitem__(self, i):
        return self.timeouts[i]

def fee(amount, params):
    if amount < 0:
        raise ValueError("amount must be non-negative")
    return params.base_fee + params.fee_rate * amount

def truncated_poisson_mean(lam, J):
    """Mean of a Poisson(lam) variable counted only up to J arrivals.

    Probabilities follow p_{x+1} = p_x * lam / (x+1). For large lam the
    start value exp(-lam) underflows, so the walk is done on logarithms.
    """
    J = int(J)
    if lam <= 0 or J <= 0:
        return 0.0

    total = 0.0
    if lam <= 700:
        p = math.exp(-lam)
        for x in range(1, J + 1):
            p *= lam / x
            term = x * p
            total += term
            if x > lam:
                ratio = lam / x
                if term * ratio / (1 - ratio) < TAIL_EPSILON * total:
                    break
    else:
        logp = -lam
        loglam = math.log(lam)
        for x in range(1, J + 1):
            logp += loglam - math.log(x)
            term = x * math.exp(logp)
            total += term
            if x > lam:
                ratio = lam / x
                if term * ratio / (1 - ratio) < TAIL_EPSILON * total:
                    break
    return total

def opportunity_cost(rate, t, val, params):
    if rate < 0 or t < 0 or val < 0:
        raise ValueError("rate, t and val must be non-negative")
    J = math.floor(val / params.per_tx_val)
    return truncated_poisson_mean(rate * t, J) * params.unit_fee

def bribe(alpha, C, D, params):
    if alpha < 0 or C < 0 or D < 0:
        raise ValueError("bribe inputs must be non-negative")
    return alpha + C + 2 * opportunity_cost(params.rate, D, alpha, params)

def timeout_schedule(kappa, D=DEFAULT_D, delta=DEFAULT_DELTA):
    if kappa < 1:
        raise ValueError("path length must be at least 1")
    if D <= 0 or delta < 0:
        raise ValueError("D must be positive and delta non-negative")
    return TimeoutSchedule(D, delta, tuple(D + (kappa - 1 - i) * delta for i in range(kappa)))

def schedule_total(kappa, D=DEFAULT_D, delta=DEFAULT_DELTA):
    return kappa * D + kappa * (kappa - 1) * delta / 2

def hop_amounts(amount, kappa, params, integral=True):
    """Per-hop forwarded amounts a_0 ... a_{kappa-1} ending in `amount`.

    Each hop upstream adds the fee of the hop below it. Ledger runs round
    the fee to whole satoshi; game payoffs keep it real.
    """
    if kappa < 1:
        raise ValueError("path length must be at least 1")
    amounts: List = [amount]
    for _ in range(kappa - 1):
        f = fee(amounts[-1], params)
        amounts.append(amounts[-1] + (round_half_up(f) if integral else f))
    amounts.reverse()
    return amounts

def channel_time_left(lifetime, t_prev, channel_age=0):
    """Blocks of channel lifetime left once the previous hop's contract expires."""
    return max(0, lifetime - (t_prev + channel_age))
