import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Optional

from .common import Nature, Protocol
from .economics import (DEFAULT_D, DEFAULT_DELTA, EconomicParams, bribe, channel_time_left, hop_amounts,
                        opportunity_cost, timeout_schedule)
from .netmodel import DEFAULT_LIFETIME
from .penalty import attack_payment_value, cumulative_penalty
from .util import bisect

logger = logging.getLogger(__name__)

# one block stands in for the infinitesimal delay before a deadline
TICK = 1

# payoffs within this relative distance count as tied
TIE_RTOL = 1e-9

class ActionKind(Enum):
    NF = "NF"
    F = "F"
    Ac = "Ac"
    Rt = "Rt"
    WaitAc = "WaitAc"
    WaitRt = "WaitRt"
    Gr = "Gr"

@dataclass(frozen=True)
class Action:
    kind: ActionKind
    t:    Optional[int] = None

    @property
    def first_mover(self):
        return self.kind in (ActionKind.NF, ActionKind.F)

    def __str__(self):
        if self.t is None:
            return self.kind.value
        return self.kind.value + "(" + str(self.t) + ")"

    @staticmethod
    def NF():
        return Action(ActionKind.NF)

    @staticmethod
    def F():
        return Action(ActionKind.F)

    @staticmethod
    def Ac():
        return Action(ActionKind.Ac)

    @staticmethod
    def Rt():
        return Action(ActionKind.Rt)

    @staticmethod
    def Gr():
        return Action(ActionKind.Gr)

    @staticmethod
    def WaitAc(t):
        return Action(ActionKind.WaitAc, t)

    @staticmethod
    def WaitRt(t):
        return Action(ActionKind.WaitRt, t)

class PayoffPair(NamedTuple):
    first:  float   # U_{i-1}, the forwarder
    second: float   # U_i, or the corrupt payee U_n

@dataclass(frozen=True)
class GameSpec:
    """Inputs of one two-player forwarding game.

    The uncorrupt branch is the game on hop `hop` of a kappa-hop payment
    whose payee receives `alpha`; the corrupt branch is the last hop of
    an n-hop self-payment. `remain_fwd`/`remain_bwd` are the residual
    balances of the forwarder and of the second mover on the game channel.
    """

    protocol:    Protocol        = Protocol.HTLC
    alpha:       float           = 15000
    n:           int             = 20
    kappa:       Optional[int]   = None
    hop:         Optional[int]   = None
    D:           int             = DEFAULT_D
    delta:       int             = DEFAULT_DELTA
    theta:       float           = 0.0
    q:           float           = 0.7
    economics:   EconomicParams  = field(default_factory=EconomicParams)
    remain_fwd:  float           = 0
    remain_bwd:  float           = 0
    lifetime:    int             = DEFAULT_LIFETIME
    channel_age: int             = 0
    C:           float           = 0
    gamma:       float           = 0.0

    def __post_init__(self):
        if self.protocol not in (Protocol.HTLC, Protocol.HTLC_GP):
            raise ValueError("games are defined for HTLC and HTLC-GP only")
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.n)
        if self.hop is None:
            object.__setattr__(self, "hop", self.kappa)
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")
        if not 1 <= self.kappa <= self.n:
            raise ValueError("kappa must lie in [1, n]")
        if not 1 <= self.hop <= self.kappa:
            raise ValueError("hop must lie in [1, kappa]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.D <= TICK:
            raise ValueError("D must exceed one block")

    ###
    # Uncorrupt branch: hop `hop` of the honest payment
    ###

    @property
    def schedule(self):
        return timeout_schedule(self.kappa, self.D, self.delta)

    @property
    def amounts(self):
        return hop_amounts(self.alpha, self.kappa, self.economics, integral=False)

    @property
    def forward_amount(self):
        """alpha_{i-1}, the amount the first mover forwards."""
        return self.amounts[self.hop - 1]

    @property
    def t_prev(self):
        """t_{i-1}, the timeout of the game contract."""
        return self.schedule[self.hop - 1]

    @property
    def forward_fee(self):
        return self.economics.base_fee + self.economics.fee_rate * self.forward_amount

    @property
    def t_tilde(self):
        return channel_time_left(self.lifetime, self.t_prev, self.channel_age)

    @property
    def penalty(self):
        """Cumulative penalty Z the second mover locked for this hop (HTLC-GP)."""
        if self.protocol is Protocol.HTLC or self.gamma == 0:
            return 0.0
        return cumulative_penalty(self.amounts, self.schedule, self.gamma, self.hop)

    ###
    # Corrupt branch: last hop of the n-hop self-payment
    ###

    @property
    def attack_schedule(self):
        return timeout_schedule(self.n, self.D, self.delta)

    @property
    def attack_amounts(self):
        value = self.alpha
        if self.protocol is Protocol.HTLC_GP:
            value = attack_payment_value(self.alpha, self.gamma, self.attack_schedule)
        return hop_amounts(value, self.n, self.economics, integral=False)

    @property
    def attack_value(self):
        """alpha_{n-1} under HTLC, v_{n-1} under HTLC-GP."""
        return self.attack_amounts[-1]

    @property
    def attack_fees(self):
        amounts = self.attack_amounts
        return amounts[0] - amounts[-1]

    @property
    def attack_penalty(self):
        """Z_v, the whole penalty chain of the self-payment."""
        if self.protocol is Protocol.HTLC or self.gamma == 0:
            return 0.0
        return cumulative_penalty(self.attack_amounts, self.attack_schedule, self.gamma, self.n)

    @property
    def bribe_value(self):
        return bribe(self.alpha, self.C, self.D, self.economics)

    def o(self, t, val):
        return opportunity_cost(self.economics.rate, t, val, self.economics)

def eta(spec, t):
    """Net profit of the corrupt payee for keeping the payment unresolved for t blocks."""
    if not 0 < t <= spec.D:
        raise ValueError("t must lie in (0, D]")
    value = spec.attack_value
    if t < spec.D - TICK:
        return -spec.C - spec.o(t, value)
    return spec.bribe_value - spec.C - spec.o(spec.D, value)

def _check_wait(spec, nature, a2):
    tmax = spec.D - TICK if nature is Nature.corrupt else spec.t_prev - TICK
    if a2.t is None or not 0 < a2.t <= tmax:
        raise ValueError(str(a2) + " is outside (0, " + str(tmax) + "]")

def _uncorrupt(spec, a2):
    f = spec.forward_fee
    fwd = spec.forward_amount
    z = spec.penalty
    t_tilde = spec.t_tilde
    M = spec.economics.mining_fee

    if a2.kind is ActionKind.Ac:
        return PayoffPair(f, fwd)
    if a2.kind is ActionKind.Rt:
        return PayoffPair(0.0, 0.0)
    if a2.kind is ActionKind.WaitAc:
        return PayoffPair(f - spec.o(a2.t, fwd), fwd - spec.o(a2.t, fwd) - spec.o(a2.t, z))
    if a2.kind is ActionKind.WaitRt:
        return PayoffPair(-spec.o(a2.t, fwd), -spec.o(a2.t, fwd) - spec.o(a2.t, z))
    # grief: both sides lose the locked coins' use and the channel; the penalty changes hands
    first = -spec.o(spec.t_prev, fwd) - spec.o(t_tilde, spec.remain_fwd) - M + z
    second = -spec.o(t_tilde, spec.remain_bwd) - spec.o(spec.t_prev, fwd) - z - spec.o(spec.t_prev, z)
    return PayoffPair(first, second)

def _corrupt(spec, a2):
    value = spec.attack_value
    f = spec.economics.base_fee + spec.economics.fee_rate * value
    fees = spec.attack_fees
    z = spec.attack_penalty
    M = spec.economics.mining_fee

    if a2.kind is ActionKind.Ac:
        return PayoffPair(f, -spec.C - fees)
    if a2.kind is ActionKind.Rt:
        return PayoffPair(0.0, -spec.C)
    if a2.kind is ActionKind.WaitAc:
        return PayoffPair(f - spec.o(a2.t, value), -fees + eta(spec, a2.t))
    if a2.kind is ActionKind.WaitRt:
        return PayoffPair(-spec.o(a2.t, value), eta(spec, a2.t))
    first = -spec.o(spec.D, value) - spec.o(spec.t_tilde, spec.remain_fwd) - M + z
    second = eta(spec, spec.D) - z - spec.o(spec.t_tilde, spec.remain_bwd)
    return PayoffPair(first, second)

def payoff(spec, nature, a1, a2=None):
    if a1.kind is ActionKind.NF:
        if a2 is not None:
            raise ValueError("no second move follows NF")
        return PayoffPair(0.0, 0.0)
    if a1.kind is not ActionKind.F:
        raise ValueError(str(a1) + " is not a first-mover action")
    if a2 is None or a2.first_mover:
        raise ValueError("F needs a second-mover response")
    if a2.kind in (ActionKind.WaitAc, ActionKind.WaitRt):
        _check_wait(spec, nature, a2)

    if nature is Nature.corrupt:
        return _corrupt(spec, a2)
    return _uncorrupt(spec, a2)

def _corrupt_loss(spec):
    """Forwarder's payoff when the counterparty turns out corrupt and plays its equilibrium mix."""
    value = spec.attack_value
    if spec.protocol is Protocol.HTLC_GP:
        return -spec.o(spec.D, value)
    return -spec.o(spec.D, value) - (1 - spec.q) * (spec.o(spec.t_tilde, spec.remain_fwd) + spec.economics.mining_fee)

def expected_payoff_forward(spec):
    return spec.theta * _corrupt_loss(spec) + (1 - spec.theta) * spec.forward_fee

def expected_payoff_noforward(spec):
    return 0.0

def cutoff_theta(spec):
    f = spec.forward_fee
    if f <= 0:
        return 0.0
    loss = -_corrupt_loss(spec)
    return min(1.0, max(0.0, f / (f + loss)))

def forward_root(spec, atol=1e-15):
    """Belief at which forwarding stops paying off, by bisection on E(F)."""
    def ef(theta):
        return expected_payoff_forward(replace(spec, theta=theta))

    if ef(1.0) >= 0:
        return 1.0
    if ef(0.0) <= 0:
        return 0.0
    return bisect(ef, 0.0, 1.0, rtol=0.0, atol=atol)

def action_set(spec, nature):
    tmax = spec.D - TICK if nature is Nature.corrupt else spec.t_prev - TICK
    actions = [Action.Ac(), Action.Rt(), Action.Gr()]
    for t in range(1, tmax + 1):
        actions.append(Action.WaitAc(t))
        actions.append(Action.WaitRt(t))
    return actions

def best_response(spec, nature):
    scored = [(payoff(spec, nature, Action.F(), a2).second, a2) for a2 in action_set(spec, nature)]
    best = max(u for u, _ in scored)
    tol = TIE_RTOL * max(1.0, abs(best))
    tied = frozenset(a2 for u, a2 in scored if best - u <= tol)
    if nature is Nature.uncorrupt:
        # an honest payee never waits when waiting gains nothing
        immediate = frozenset(a2 for a2 in tied if a2.t is None)
        if immediate:
            return immediate
    return tied

def sweep_rows(spec, thetas):
    """Expected payoffs of both players along a belief grid, zero past the decision flip."""
    corrupt_best = max(payoff(spec, Nature.corrupt, Action.F(), a2).second for a2 in action_set(spec, Nature.corrupt))
    uncorrupt_best = payoff(spec, Nature.uncorrupt, Action.F(), Action.Ac()).second
    rows = []
    for theta in thetas:
        ef = expected_payoff_forward(replace(spec, theta=theta))
        forward = ef > 0
        rows.append({
            "theta": theta,
            "protocol": spec.protocol.value,
            "amount": spec.alpha,
            "rate": spec.economics.rate,
            "e_forward": ef,
            "E_first": ef if forward else 0.0,
            "E_second_uncorrupt": uncorrupt_best if forward else 0.0,
            "E_second_corrupt": corrupt_best if forward else 0.0,
            "decision": "F" if forward else "NF",
        })
    return rows
