import logging
import math
import random
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .common import AbortCode, LedgerKind, LockAborted, PayeeAction, Protocol, Strategy
from .contracts import lock_htlc, lock_payment, preprocess, release
from .economics import DEFAULT_D, DEFAULT_DELTA, EconomicParams, bribe, timeout_schedule
from .netmodel import DEFAULT_MAX_EXPANSIONS, find_attack_cycle, penalty_chain
from .penalty import PenaltyParams, attack_payment_value
from .util import round_half_up

logger = logging.getLogger(__name__)

DEFAULT_AUX_CAPACITY = 250000

@dataclass(frozen=True)
class AttackerConfig:
    """How the adversary spends its budget and what it routes.

    `C` is what each attack instance costs on top of the payment; a pendant
    node spends it on the channel that gives it a second neighbour.
    """

    protocol:       Protocol       = Protocol.HTLC
    alpha:          int            = 50000
    n:              int            = 20
    budget:         int            = 100_000_000
    C:              int            = DEFAULT_AUX_CAPACITY
    penalty:        PenaltyParams  = field(default_factory=lambda: PenaltyParams.plain(0.0))
    strategy:       Strategy       = Strategy.grief
    D:              int            = DEFAULT_D
    delta:          int            = DEFAULT_DELTA
    economics:      EconomicParams = field(default_factory=EconomicParams)
    max_expansions: int            = DEFAULT_MAX_EXPANSIONS

    def __post_init__(self):
        if self.alpha <= 0 or self.budget < 0 or self.C < 0:
            raise ValueError("budget and C must be non-negative, alpha positive")
        if self.n < 3:
            raise ValueError("an attack cycle needs at least 3 hops")
        if self.protocol is not Protocol.HTLC and self.penalty.gamma <= 0:
            raise ValueError(self.protocol.value + " needs a positive gamma")
        if self.protocol is Protocol.HTLC_GP_ZETA and not self.penalty.guaranteed:
            raise ValueError("HTLC-GP-zeta needs zeta > 0")

    @property
    def corruption_cost(self):
        """L, the bribe that buys one corrupt node."""
        return bribe(self.alpha, self.C, self.D, self.economics)

    @property
    def affordable(self):
        """How many instances the budget pays for; None when corruption costs nothing."""
        cost = self.corruption_cost
        if cost <= 0:
            return None
        return int(math.floor(self.budget / cost))

    @property
    def target_length(self):
        if self.protocol is Protocol.HTLC_GP_ZETA:
            return min(self.n, self.penalty.n_max)
        return self.n

    def value_for_length(self, length):
        """Amount the corrupt payee receives on a self-payment of `length` hops."""
        if self.protocol is Protocol.HTLC:
            return self.alpha
        schedule = timeout_schedule(length, self.D, self.delta)
        return round_half_up(attack_payment_value(self.alpha, self.penalty.gamma, schedule))

@dataclass
class AttackInstance:
    corrupt:                 str
    cycle:                   object            # PaymentPath starting and ending at corrupt
    payment_value:           int
    penalty_locked:          int               # cgp the corrupt payee locks on the last hop
    coins_locked_by_victims: int
    aux:                     Optional[Tuple[str, str]] = None

    @property
    def kappa(self):
        return self.cycle.kappa

@dataclass
class AttackOutcome:
    corrupt:             str
    kappa:               int
    victims_locked:      int
    penalty_paid:        int
    penalty_transferred: List[int]
    channels_closed:     int
    locked_blocks:       int
    aborted_at:          Optional[int] = None
    abort_code:          Optional[AbortCode] = None
    events:              list = field(default_factory=list, repr=False)

    @property
    def aborted(self):
        return self.abort_code is not None

    def to_dict(self):
        return {
            "corrupt": self.corrupt,
            "kappa": self.kappa,
            "victims_locked": self.victims_locked,
            "penalty_paid": self.penalty_paid,
            "channels_closed": self.channels_closed,
            "locked_blocks": self.locked_blocks,
            "aborted_at": self.aborted_at,
            "abort_code": self.abort_code.value if self.abort_code else None,
        }

def corrupt_candidates(graph):
    """Pendant nodes first, then degree-2 nodes, ascending id within each."""
    return sorted((u for u in graph.nodes if 1 <= graph.degree(u) <= 2), key=lambda u: (graph.degree(u), u))

def select_corrupt_nodes(graph, config):
    """The candidates the budget buys when every instance turns out feasible."""
    candidates = corrupt_candidates(graph)
    if config.affordable is None:
        return candidates
    return candidates[:config.affordable]

def open_auxiliary_channel(graph, corrupt, capacity):
    """Connect a pendant node to the best-connected node it has no channel with."""
    targets = [u for u in graph.nodes if u != corrupt and not graph.has_channel(corrupt, u)]
    if not targets or capacity <= 0:
        return None
    target = min(targets, key=lambda u: (-graph.degree(u), u))
    graph.add_channel(corrupt, target, capacity, opened_at=graph.clock)
    logger.debug("auxiliary channel " + str(corrupt) + "-" + str(target) + " capacity " + str(capacity))
    return (corrupt, target)

def plan_attack(graph, corrupt, config):
    """Build the self-payment cycle through `corrupt`; None marks an infeasible instance."""
    aux = None
    if graph.degree(corrupt) < 2:
        aux = open_auxiliary_channel(graph, corrupt, config.C)

    gamma = config.penalty.gamma if config.protocol.penalized else 0.0
    cycle = find_attack_cycle(graph, corrupt, config.target_length, economics=config.economics, gamma=gamma,
                              D=config.D, delta=config.delta, amount_for_length=config.value_for_length,
                              max_expansions=config.max_expansions)
    if cycle is None:
        if aux is not None:
            graph.remove_channel(*aux)
        logger.debug("no attack cycle through " + str(corrupt))
        return None

    cgp = penalty_chain(cycle.amounts, cycle.timeouts, gamma) if gamma > 0 else [0] * cycle.kappa
    victims = sum(cycle.amounts[1:]) + sum(cgp[:-1])
    return AttackInstance(corrupt, cycle, cycle.amounts[-1], cgp[-1], victims, aux)

def mount_attack(graph, instance, config, rng=None):
    """Lock the self-payment on every hop of the cycle; nothing is released."""
    rng = rng or random.Random()
    cycle = instance.cycle
    if config.protocol is Protocol.HTLC:
        return lock_htlc(graph, cycle, rng, economics=config.economics)

    penalty = config.penalty
    if config.protocol is Protocol.HTLC_GP:
        penalty = PenaltyParams.plain(penalty.gamma)
    envelope = preprocess(cycle, penalty, rng, phi=cycle.kappa if penalty.guaranteed else None)
    return lock_payment(graph, envelope, economics=config.economics, enforce_minimum=False)

def _locked_blocks(strategy, D):
    return D if strategy is Strategy.grief else D - 1

def resolve_attack(graph, instance, locked, config):
    """Let the corrupt payee play its strategy and account for the damage."""
    action = config.strategy.payee_action()
    events = release(graph, locked, action, economics=config.economics)
    cgp = [c.cgp for c in locked.cancellations]
    griefed = action is PayeeAction.GRIEF and bool(cgp)

    return AttackOutcome(
        corrupt=instance.corrupt,
        kappa=instance.kappa,
        victims_locked=locked.victim_lock(),
        penalty_paid=cgp[-1] - cgp[0] if griefed else 0,
        penalty_transferred=list(cgp) if griefed else [],
        channels_closed=sum(1 for e in events if e.kind is LedgerKind.close),
        locked_blocks=_locked_blocks(config.strategy, locked.path.timeouts[-1]),
        events=list(events),
    )

def execute_attack(graph, instance, config, rng=None):
    """Lock and resolve one planned attack.

    An honest node refusing to lock leaves a partial outcome that records
    the abort hop and what had been locked before the unwind.
    """
    try:
        locked = mount_attack(graph, instance, config, rng)
    except LockAborted as e:
        logger.info("attack through " + str(instance.corrupt) + " aborted at hop " + str(e.hop) + ": " + e.code.value)
        return AttackOutcome(instance.corrupt, instance.kappa, e.locked_before_abort, 0, [], 0, 0, e.hop, e.code)
    return resolve_attack(graph, instance, locked, config)
