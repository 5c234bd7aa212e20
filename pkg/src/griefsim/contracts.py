import hashlib
import logging
import secrets
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .common import (AbortCode, ChannelError, ContractError, ContractState, LockAborted, PayeeAction,
                     Protocol)
from .economics import EconomicParams, fee, opportunity_cost
from .penalty import PenaltyParams
from .util import round_half_up

logger = logging.getLogger(__name__)

# relative slack on the real-valued penalty checks
CHECK_RTOL = 1e-9

def digest(preimage):
    return hashlib.sha256(preimage).digest()

def _random_bytes(rng):
    if rng is None:
        return secrets.token_bytes(32)
    return rng.getrandbits(256).to_bytes(32, "big")

@dataclass(frozen=True)
class HashPair:
    payment_hash: bytes                                   # H = hash(x)
    cancel_hash:  bytes                                   # Y = hash(r)
    x:            Optional[bytes] = field(default=None, repr=False)
    r:            Optional[bytes] = field(default=None, repr=False)

    @staticmethod
    def generate(rng=None):
        """Fresh preimages; pass a seeded random.Random for reproducible runs."""
        x = _random_bytes(rng)
        r = _random_bytes(rng)
        while r == x:
            r = _random_bytes(rng)
        return HashPair(digest(x), digest(r), x, r)

    def public(self):
        return HashPair(self.payment_hash, self.cancel_hash)

    def opens_payment(self, z):
        return digest(z) == self.payment_hash

    def opens_cancel(self, z):
        return digest(z) == self.cancel_hash

@dataclass
class CancellationContract:
    contract_id:    str
    channel:        Tuple[str, str]   # (U_i, U_i+1)
    payer_side:     str               # U_i
    penalty_locker: str               # U_i+1
    cgp:            int               # locked amount, rounded
    cgp_exact:      float
    timeout:        int               # t_i, relative to formed_at
    payment_hash:   bytes
    cancel_hash:    bytes
    formed_at:      int
    state:          ContractState = ContractState.proposed

@dataclass
class PaymentContract:
    contract_id:  str
    channel:      Tuple[str, str]
    sender:       str
    receiver:     str
    amount:       int
    timeout:      int
    payment_hash: bytes
    cancel_hash:  bytes
    formed_at:    int
    state:        ContractState = ContractState.proposed

@dataclass(frozen=True)
class HopRecord:
    """What node U_i learns from the routing envelope, and nothing more."""

    payment_hash: bytes
    cancel_hash:  bytes
    amount:       int               # alpha_i forwarded, or alpha received by the payee
    prev_timeout: Optional[int]     # t_{i-1}
    prev_cgp:     Optional[float]   # cgp_{i-1}, real valued
    next_hop:     Optional[str]
    blind:        Optional[int] = None

@dataclass
class RoutingEnvelope:
    path:      object                           # PaymentPath
    protocol:  Protocol
    penalty:   PenaltyParams
    hashes:    HashPair                         # digests only
    phi:       int
    psi:       float
    cgp_exact: Tuple[float, ...]
    cgp:       Tuple[int, ...]
    records:   Tuple[HopRecord, ...]
    secret:    HashPair = field(repr=False, default=None)   # the payee's preimages
    economics: EconomicParams = field(default_factory=EconomicParams)

    @property
    def kappa(self):
        return self.path.kappa

    @property
    def alpha(self):
        return self.path.amounts[-1]

    def record_for(self, i):
        return self.records[i]

    def contract_id(self, kind, i):
        return self.hashes.payment_hash.hex()[:12] + "/" + kind + str(i)

@dataclass
class LockedPayment:
    envelope:      RoutingEnvelope
    cancellations: List[CancellationContract]
    payments:      List[PaymentContract]

    @property
    def path(self):
        return self.envelope.path

    def victim_lock(self):
        """Coins locked by the nodes strictly between payer and payee."""
        return (sum(p.amount for p in self.payments[1:])
                + sum(c.cgp for c in self.cancellations[:-1]))

###
# Pre-processing
###

def _envelope(path, protocol, penalty, hashes, phi, psi):
    amounts, timeouts = path.amounts, path.timeouts
    kappa = path.kappa
    gamma = penalty.gamma

    cgp_exact = []
    acc = (amounts[0] + psi) * timeouts[0]
    for i in range(kappa):
        if i > 0:
            acc += amounts[i] * timeouts[i]
        cgp_exact.append(gamma * acc)
    cgp = tuple(round_half_up(c) for c in cgp_exact)

    public = hashes.public()
    records = [HopRecord(public.payment_hash, public.cancel_hash, amounts[0], None, None, path.hops[1])]
    for i in range(1, kappa):
        records.append(HopRecord(public.payment_hash, public.cancel_hash, amounts[i], timeouts[i - 1],
                                 cgp_exact[i - 1], path.hops[i + 1]))
    records.append(HopRecord(public.payment_hash, public.cancel_hash, amounts[-1], timeouts[-1],
                             cgp_exact[-1], None, phi))

    return RoutingEnvelope(path, protocol, penalty, public, phi, psi, tuple(cgp_exact), cgp, tuple(records), hashes)

def preprocess(path, penalty, rng, hashes=None, phi=None):
    """Build the routing envelope of a penalised payment along `path`.

    With a guaranteed minimum compensation the payer hides the path length
    behind phi, drawn from [kappa, n_max], and pads the first hop's penalty
    with psi so that the payee's penalty reads as gamma*phi*alpha*D.
    """
    kappa = path.kappa
    alpha = path.amounts[-1]
    hashes = hashes or HashPair.generate(rng)

    if not penalty.guaranteed:
        return _envelope(path, Protocol.HTLC_GP, penalty, hashes, kappa, 0.0)

    if kappa > penalty.n_max:
        raise ValueError("path length " + str(kappa) + " exceeds the maximum " + str(penalty.n_max))
    if phi is None:
        phi = rng.randint(kappa, penalty.n_max)
    elif not kappa <= phi <= penalty.n_max:
        raise ValueError("phi must lie in [" + str(kappa) + ", " + str(penalty.n_max) + "]")

    amounts, timeouts = path.amounts, path.timeouts
    D = timeouts[-1]
    rest = sum(amounts[j] * timeouts[j] for j in range(1, kappa))
    psi = max(0.0, (phi * alpha * D - rest) / timeouts[0] - amounts[0])
    logger.debug("preprocess kappa=" + str(kappa) + " phi=" + str(phi) + " psi=" + repr(psi))
    return _envelope(path, Protocol.HTLC_GP_ZETA, penalty, hashes, phi, psi)

###
# Locking
###

def _theta(beliefs, i):
    if beliefs is None:
        return None
    if isinstance(beliefs, dict):
        return beliefs.get(i)
    return beliefs

def _close(a, b):
    return abs(a - b) <= CHECK_RTOL * max(1.0, abs(a), abs(b))

def _unwind(graph, cancellations, payments):
    for p in payments:
        if p.state is ContractState.active:
            graph.release(p.sender, p.receiver, p.amount, False, p.contract_id)
            p.state = ContractState.resolved_release
    for c in cancellations:
        if c is not None and c.state is ContractState.active:
            graph.release(c.penalty_locker, c.payer_side, c.cgp, False, c.contract_id)
            c.state = ContractState.resolved_release

def _abort(graph, hop, code, message, cancellations, payments=()):
    locked = sum(p.amount for p in payments if p.state is ContractState.active)
    locked += sum(c.cgp for c in cancellations if c is not None and c.state is ContractState.active)
    _unwind(graph, cancellations, payments)
    logger.debug("locking aborted at hop " + str(hop) + ": " + code.value + " " + message)
    raise LockAborted(hop, code, message, locked)

def _payee_checks(graph, env):
    """Checks U_kappa runs on its own record before asking for the last contract."""
    kappa = env.kappa
    rec = env.record_for(kappa)
    path = env.path
    penalty = env.penalty
    D = rec.prev_timeout
    delta = path.timeouts[0] - path.timeouts[1] if kappa > 1 else 0

    if kappa > 1 and D < delta:
        return AbortCode.DEADLINE_TOO_CLOSE, "t' " + str(D) + " < delta " + str(delta)
    if rec.amount != env.alpha:
        return AbortCode.AMOUNT_MISMATCH, "expected " + str(env.alpha)
    if rec.payment_hash != env.secret.payment_hash or rec.cancel_hash != env.secret.cancel_hash:
        return AbortCode.HASH_MISMATCH, "payee hashes"
    if penalty.guaranteed:
        last = env.cgp_exact[-1]
        if penalty.k is not None and last > penalty.k * env.alpha * (1 + CHECK_RTOL):
            return AbortCode.PENALTY_EXCEEDS_MAXIMUM, repr(last) + " > k*alpha"
        if last < penalty.gamma * rec.blind * env.alpha * D * (1 - CHECK_RTOL):
            return AbortCode.BLINDING_MISMATCH, repr(last) + " < gamma*phi*alpha*D"
    payee, prev = path.hops[kappa], path.hops[kappa - 1]
    if graph.remain(payee, prev) < env.cgp[-1]:
        return AbortCode.INSUFFICIENT_REMAIN, "payee cannot lock " + str(env.cgp[-1])
    return None

def _forwarder_checks(graph, env, i, request, theta, economics, enforce_minimum):
    """Checks U_i (0 <= i < kappa) runs on the request coming from U_i+1."""
    path = env.path
    rec = env.record_for(i)
    penalty = env.penalty
    t_req, cgp_req, h_req, y_req = request
    alpha_i = path.amounts[i]
    u, nxt = path.hops[i], path.hops[i + 1]

    if theta is not None:
        f = fee(alpha_i, economics)
        o = opportunity_cost(economics.rate, path.timeouts[i], alpha_i, economics)
        if f <= 0 or theta >= f / (f + o):
            return AbortCode.BELIEF_TOO_HIGH, "theta " + repr(theta) + " against cutoff " + repr(f / (f + o) if f > 0 else 0.0)
    if h_req != rec.payment_hash or y_req != rec.cancel_hash:
        return AbortCode.HASH_MISMATCH, "request hashes differ from record"

    if i == 0:
        if t_req != path.timeouts[0]:
            return AbortCode.TIMEOUT_ORDER, "t' " + str(t_req) + " != t_0"
        if enforce_minimum and cgp_req < penalty.zeta * alpha_i * (1 - CHECK_RTOL):
            return AbortCode.MIN_COMPENSATION_VIOLATED, "cgp_0 below zeta*alpha_0"
    else:
        delta = rec.prev_timeout - path.timeouts[i]
        if t_req + delta > rec.prev_timeout or t_req >= rec.prev_timeout:
            return AbortCode.TIMEOUT_ORDER, "t' " + str(t_req) + " too close to t_{i-1} " + str(rec.prev_timeout)
        if not _close(cgp_req - penalty.gamma * alpha_i * t_req, rec.prev_cgp):
            return AbortCode.PENALTY_MISMATCH, "cgp_i - gamma*alpha_i*t' != cgp_{i-1}"
        if enforce_minimum and penalty.gamma * alpha_i * t_req < penalty.zeta * alpha_i * (1 - CHECK_RTOL):
            return AbortCode.MIN_COMPENSATION_VIOLATED, "gamma*alpha_i*t' below zeta*alpha_i"
        prev = path.hops[i - 1]
        if graph.remain(u, prev) < env.cgp[i - 1]:
            return AbortCode.INSUFFICIENT_REMAIN, str(u) + " cannot lock " + str(env.cgp[i - 1])

    if not graph.has_open_channel(u, nxt):
        return AbortCode.CHANNEL_CLOSED, str((u, nxt))
    if graph.remain(u, nxt) < alpha_i:
        return AbortCode.INSUFFICIENT_REMAIN, str(u) + " cannot forward " + str(alpha_i)
    return None

def lock_round1(graph, envelope, beliefs=None, economics=None, enforce_minimum=True):
    """First round: cancellation contracts from the payee back to the payer.

    `beliefs` maps a hop index j to the belief theta_j that U_{j-1} holds
    about U_j (a single float applies to every hop); None skips the belief
    guard. Returns the contracts indexed by hop.
    """
    economics = economics or EconomicParams()
    env = envelope
    path = env.path
    kappa = env.kappa
    contracts: List[Optional[CancellationContract]] = [None] * kappa

    failure = _payee_checks(graph, env)
    if failure:
        _abort(graph, kappa, failure[0], failure[1], contracts)

    for i in range(kappa - 1, -1, -1):
        u, nxt = path.hops[i], path.hops[i + 1]
        request = (path.timeouts[i], env.cgp_exact[i], env.hashes.payment_hash, env.hashes.cancel_hash)
        failure = _forwarder_checks(graph, env, i, request, _theta(beliefs, i + 1), economics, enforce_minimum)
        if failure:
            _abort(graph, i, failure[0], failure[1], contracts)

        contract = CancellationContract(env.contract_id("c", i), graph.channel(u, nxt).key, u, nxt, env.cgp[i],
                                        env.cgp_exact[i], path.timeouts[i], env.hashes.payment_hash,
                                        env.hashes.cancel_hash, graph.clock)
        try:
            graph.lock(nxt, u, contract.cgp, contract.contract_id)
        except ChannelError as e:
            _abort(graph, i + 1, AbortCode.INSUFFICIENT_REMAIN, str(e), contracts)
        contract.state = ContractState.active
        contracts[i] = contract
        logger.debug("cancellation contract " + contract.contract_id + " cgp=" + str(contract.cgp))

    return contracts

def _payment_checks(graph, env, i, cancellations):
    path = env.path
    u, nxt = path.hops[i], path.hops[i + 1]
    if cancellations is not None:
        c = cancellations[i] if i < len(cancellations) else None
        if c is None or c.state is not ContractState.active:
            return AbortCode.MISSING_CANCELLATION_CONTRACT, "hop " + str(i)
    if i > 0:
        delta = path.timeouts[i - 1] - path.timeouts[i]
        if delta <= 0:
            return AbortCode.TIMEOUT_ORDER, "t_{i-1} " + str(path.timeouts[i - 1]) + " <= t_i " + str(path.timeouts[i])
        hop_fee = round_half_up(fee(path.amounts[i], env.economics))
        if path.amounts[i - 1] - path.amounts[i] != hop_fee:
            return AbortCode.AMOUNT_MISMATCH, "alpha_{i-1} - alpha_i != fee(alpha_i)"
    if not graph.has_open_channel(u, nxt):
        return AbortCode.CHANNEL_CLOSED, str((u, nxt))
    if graph.remain(u, nxt) < path.amounts[i]:
        return AbortCode.INSUFFICIENT_REMAIN, str(u) + " cannot forward " + str(path.amounts[i])
    return None

def _lock_payments(graph, env, cancellations):
    path = env.path
    payments: List[PaymentContract] = []
    for i in range(env.kappa):
        failure = _payment_checks(graph, env, i, cancellations)
        if failure:
            _abort(graph, i, failure[0], failure[1], cancellations or [], payments)
        u, nxt = path.hops[i], path.hops[i + 1]
        contract = PaymentContract(env.contract_id("p", i), graph.channel(u, nxt).key, u, nxt, path.amounts[i],
                                   path.timeouts[i], env.hashes.payment_hash, env.hashes.cancel_hash, graph.clock)
        graph.lock(u, nxt, contract.amount, contract.contract_id)
        contract.state = ContractState.active
        payments.append(contract)
    return payments

def lock_round2(graph, envelope, cancellations):
    """Second round: payment contracts from the payer forward to the payee.

    Any failure unwinds both rounds.
    """
    if cancellations is None or len(cancellations) != envelope.kappa:
        raise ContractError("second round needs a cancellation contract on every hop")
    return _lock_payments(graph, envelope, cancellations)

def lock_payment(graph, envelope, beliefs=None, economics=None, enforce_minimum=True):
    envelope.economics = economics or EconomicParams()
    cancellations = lock_round1(graph, envelope, beliefs, economics, enforce_minimum)
    payments = lock_round2(graph, envelope, cancellations)
    return LockedPayment(envelope, cancellations, payments)

def _htlc_cutoff(graph, path, i, theta, economics, q):
    from .games import GameSpec, cutoff_theta

    u, nxt = path.hops[i], path.hops[i + 1]
    ch = graph.channel(u, nxt)
    spec = GameSpec(protocol=Protocol.HTLC, alpha=path.amounts[-1], n=path.kappa, kappa=path.kappa, hop=i + 1,
                    D=path.timeouts[-1], delta=path.timeouts[0] - path.timeouts[1] if path.kappa > 1 else 0,
                    theta=theta, q=q, economics=economics, remain_fwd=graph.remain(u, nxt), lifetime=ch.lifetime,
                    channel_age=max(0, graph.clock - ch.opened_at))
    return cutoff_theta(spec)

def lock_htlc(graph, path, rng=None, beliefs=None, economics=None, q=0.7, hashes=None):
    """Plain HTLC forward locking; with beliefs each forwarder applies the HTLC forwarding cutoff."""
    economics = economics or EconomicParams()
    env = _envelope(path, Protocol.HTLC, PenaltyParams.plain(0.0), hashes or HashPair.generate(rng), path.kappa, 0.0)
    env.economics = economics

    for i in range(path.kappa):
        theta = _theta(beliefs, i + 1)
        if theta is not None:
            cutoff = _htlc_cutoff(graph, path, i, theta, economics, q)
            if theta >= cutoff:
                raise LockAborted(i, AbortCode.BELIEF_TOO_HIGH, "theta " + repr(theta) + " against cutoff " + repr(cutoff))

    payments = _lock_payments(graph, env, None)
    return LockedPayment(env, [], payments)

###
# Release
###

def _resolve(contract, state):
    if contract.state is not ContractState.active:
        raise ContractError("contract " + contract.contract_id + " is " + contract.state.value + ", cannot resolve again")
    contract.state = state

def settle_hop(graph, locked, i, z):
    """Mutual off-chain termination of hop i once preimage z is known."""
    payment = locked.payments[i]
    if digest(z) == payment.payment_hash:
        to_receiver = True
    elif digest(z) == payment.cancel_hash:
        to_receiver = False
    else:
        raise ContractError("preimage does not match the hashes of " + payment.contract_id)

    _resolve(payment, ContractState.resolved_release)
    graph.release(payment.sender, payment.receiver, payment.amount, to_receiver, payment.contract_id)
    if locked.cancellations:
        c = locked.cancellations[i]
        _resolve(c, ContractState.resolved_release)
        graph.release(c.penalty_locker, c.payer_side, c.cgp, False, c.contract_id)

def claim_hop(graph, locked, i, mining_fee):
    """On-chain claim by the payer of hop i after its timeout: refund plus penalty, then closure."""
    payment = locked.payments[i]
    if graph.clock < payment.formed_at + payment.timeout:
        raise ContractError("timeout of " + payment.contract_id + " not reached at block " + str(graph.clock))

    _resolve(payment, ContractState.resolved_timeout)
    graph.release(payment.sender, payment.receiver, payment.amount, False, payment.contract_id, onchain=True)
    if locked.cancellations:
        c = locked.cancellations[i]
        _resolve(c, ContractState.resolved_timeout)
        graph.release(c.penalty_locker, c.payer_side, c.cgp, True, c.contract_id, onchain=True)
    graph.close(payment.sender, payment.receiver, payment.sender, mining_fee, payment.contract_id)

def release(graph, locked, payee_action, mu=1, wait=0, economics=None):
    """Release phase driven by the payee's action; returns the ledger events it produced."""
    economics = economics or EconomicParams()
    start = len(graph.events)
    env = locked.envelope
    path = env.path
    secret = env.secret
    formed = locked.payments[-1].formed_at

    for contract in locked.payments + list(locked.cancellations):
        if contract.state is not ContractState.active:
            raise ContractError("contract " + contract.contract_id + " already " + contract.state.value)

    if payee_action is PayeeAction.GRIEF:
        for i in range(env.kappa - 1, -1, -1):
            graph.advance(max(graph.clock, formed + path.timeouts[i]))
            claim_hop(graph, locked, i, economics.mining_fee)
        logger.debug("grief resolved on-chain at block " + str(graph.clock))
        return graph.events[start:]

    delay = path.timeouts[-1] - 1 if payee_action is PayeeAction.WAIT_REJECT_AT_DEADLINE else wait
    if not 0 <= delay < path.timeouts[-1]:
        raise ValueError("payee must act before its deadline " + str(path.timeouts[-1]))
    graph.advance(max(graph.clock, formed + delay))

    z = secret.x if payee_action is PayeeAction.RELEASE_X else secret.r
    if z == secret.x:
        last = locked.payments[-1]
        first = locked.cancellations[-1].formed_at if locked.cancellations else last.formed_at
        if last.formed_at - first > mu or last.amount != env.alpha:
            logger.debug("payment contract late or wrong, payee cancels instead")
            z = secret.r

    for i in range(env.kappa - 1, -1, -1):
        settle_hop(graph, locked, i, z)
    return graph.events[start:]

def run_htlc(graph, path, alpha, payee_action, rng=None, beliefs=None, economics=None, q=0.7, mu=1, wait=0):
    if alpha != path.amounts[-1]:
        raise ValueError("alpha must equal the amount delivered on the last hop")
    locked = lock_htlc(graph, path, rng, beliefs, economics, q)
    return release(graph, locked, payee_action, mu, wait, economics)
