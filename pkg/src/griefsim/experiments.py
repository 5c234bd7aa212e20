import csv
import json
import logging
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .attacker import AttackerConfig, corrupt_candidates, mount_attack, plan_attack
from .common import AbortCode, BalanceMode, InfeasibleExperiment, LockAborted, PayeeAction, Protocol, Strategy
from .contracts import lock_htlc, lock_payment, preprocess, release
from .economics import DEFAULT_D, DEFAULT_DELTA, EconomicParams, hop_amounts, timeout_schedule
from .games import cutoff_theta, sweep_rows
from .netmodel import (DEFAULT_MAX_EXPANSIONS, SYNTHETIC_NODES, SYNTHETIC_SEED, PaymentPath, find_route,
                       load_snapshot, synthetic_graph)
from .penalty import PenaltyParams, attack_payment_value, cumulative_penalty, max_path_length, penalty_rate
from .util import parallel_map

logger = logging.getLogger(__name__)

# (k, zeta, printed gamma, printed path length, locked ratio HTLC-GP-zeta, locked ratio HTLC-GP)
REFERENCE_GRID = [
    (0.005, 0.00025, 2.4e-7, 20, 0.9689, 0.9689),
    (0.005, 0.0005, 9.1e-7, 10, 0.463, 0.8986),
    (0.005, 0.0025, 1.4e-5, 2, 0.0521, 0.507),
    (0.01, 0.0005, 4.7e-7, 20, 0.94, 0.94),
    (0.01, 0.001, 1.8e-6, 10, 0.448, 0.815),
    (0.01, 0.005, 2.8e-5, 2, 0.051, 0.42),
    (0.05, 0.0025, 2.4e-6, 20, 0.78, 0.78),
    (0.05, 0.005, 9.1e-6, 10, 0.382, 0.54),
    (0.05, 0.025, 1.6e-4, 2, 0.047, 0.33),
    (0.1, 0.005, 4.8e-6, 20, 0.675, 0.675),
    (0.1, 0.01, 1.8e-5, 10, 0.335, 0.455),
    (0.1, 0.05, 3.3e-4, 2, 0.0445, 0.325),
    (0.25, 0.0125, 1.2e-5, 20, 0.53, 0.53),
    (0.25, 0.025, 4.5e-5, 10, 0.28, 0.40),
    (0.25, 0.1125, 6.9e-4, 2, 0.042, 0.32),
    (0.5, 0.025, 2.4e-5, 20, 0.44, 0.44),
    (0.5, 0.05, 9.1e-5, 10, 0.221, 0.385),
    (0.5, 0.2, 1.1e-3, 2, 0.038, 0.315),
    (0.75, 0.0375, 3.6e-5, 20, 0.41, 0.41),
    (0.75, 0.075, 1.36e-4, 10, 0.212, 0.356),
    (0.75, 0.3, 1.7e-3, 2, 0.0351, 0.3004),
    (1, 0.05, 4.8e-5, 20, 0.38, 0.38),
    (1, 0.1, 1.8e-4, 10, 0.20, 0.34),
    (1, 0.5, 3.3e-3, 2, 0.034, 0.2998),
    (2, 0.1, 1e-4, 20, 0.35, 0.35),
    (2, 0.2, 3.6e-4, 10, 0.18, 0.32),
    (2, 0.95, 6.1e-3, 2, 0.0334, 0.2901),
]

# rows whose printed gamma disagrees with the closed form
PRINTED_GAMMA_ERRATA = {(0.005, 0.0025), (0.01, 0.005)}

NO_FEES = EconomicParams(base_fee=0.0, fee_rate=0.0)

AMOUNT_RANGE = (10000, 100000)
WALK_RETRIES = 10
ROUTE_RETRIES = 5
ROUTE_MAX_LEN = 12

###
# Closed forms and their oracle
###

class ClaimVariant(Enum):
    STATEMENT = "statement"   # closed form as printed
    PROOF = "proof"           # form the derivation supports

def _check_lengths(n, n_tilde=None):
    if n < 2:
        raise ValueError("loss percent needs n >= 2")
    if n_tilde is not None and not 2 <= n_tilde <= n:
        raise ValueError("n_tilde must lie in [2, n]")

def loss_percent_htlcgp(gamma, n, D=DEFAULT_D, delta=DEFAULT_DELTA):
    """Share of the HTLC victim lock that HTLC-GP no longer locks (fees off)."""
    _check_lengths(n)
    num = gamma * n * (D / 2 + delta * (n - 2) / 6)
    den = 1 + gamma * n * (D + (n - 1) * delta / 2)
    return num / den

def loss_percent_gpzeta(gamma, n_tilde, n, D=DEFAULT_D, delta=DEFAULT_DELTA, variant=ClaimVariant.PROOF):
    """Same as loss_percent_htlcgp for HTLC-GP-zeta, where paths are capped at n_tilde hops.

    The printed statement and the derivation differ in one Delta term and
    in which schedule the denominator sums over; `variant` picks one.
    """
    _check_lengths(n, n_tilde)
    if variant is ClaimVariant.STATEMENT:
        inner = D + 2 * n_tilde * delta / 3
        den = (n - 1) * (1 + gamma * n * D + gamma * n * delta * (n - 1) / 2)
    else:
        inner = D + (2 * n_tilde - 1) * delta / 3
        den = (n - 1) * (1 + gamma * timeout_schedule(n_tilde, D, delta).total)
    num = (n - n_tilde) + gamma * n_tilde * ((n - 1) * (D + (n_tilde - 1) * delta / 2) - (n_tilde - 1) / 2 * inner)
    return num / den

def loss_oracle(protocol, n, n_tilde, gamma, D=DEFAULT_D, delta=DEFAULT_DELTA, alpha=1_000_000):
    """Loss by direct accounting of the coins victims lock, fees off.

    HTLC locks (n-1)*alpha. The penalised protocol spends alpha on a
    self-payment of value v plus its penalty over an n_tilde-hop cycle and
    locks (n_tilde-1)*v plus the penalties of every victim hop.
    """
    _check_lengths(n, n_tilde)
    htlc = (n - 1) * alpha
    if protocol is Protocol.HTLC:
        return 0.0

    length = n if protocol is Protocol.HTLC_GP else n_tilde
    schedule = timeout_schedule(length, D, delta)
    v = attack_payment_value(alpha, gamma, schedule)
    amounts = hop_amounts(v, length, NO_FEES, integral=False)
    locked = math.fsum(amounts[1:])
    if gamma > 0:
        locked += math.fsum(cumulative_penalty(amounts, schedule, gamma, i) for i in range(1, length))
    return (htlc - locked) / htlc

def table2_grid(D=DEFAULT_D, delta=DEFAULT_DELTA, grid=None):
    rows = []
    for k, zeta, printed_gamma, printed_n, _, _ in grid or REFERENCE_GRID:
        rows.append({
            "k": k,
            "zeta": zeta,
            "gamma": penalty_rate(k, zeta, D, delta),
            "n_max": max_path_length(k, zeta),
            "printed_gamma": printed_gamma,
            "printed_n_max": printed_n,
        })
    return rows

def claims_check(gammas, ns, kzeta, D=DEFAULT_D, delta=DEFAULT_DELTA):
    """Closed forms next to the oracle, one row per (claim, gamma, n, n_tilde)."""
    rows = []
    for gamma in gammas:
        for n in ns:
            closed = loss_percent_htlcgp(gamma, n, D, delta)
            oracle = loss_oracle(Protocol.HTLC_GP, n, n, gamma, D, delta)
            rows.append({"claim": "htlc-gp", "gamma": gamma, "n": n, "n_max": n, "loss_pct": closed,
                         "statement": closed, "oracle": oracle, "rel_error": _rel(closed, oracle)})
    for k, zeta in kzeta:
        gamma = penalty_rate(k, zeta, D, delta)
        n_tilde = max_path_length(k, zeta)
        for n in ns:
            if not 2 <= n_tilde <= n:
                continue
            proof = loss_percent_gpzeta(gamma, n_tilde, n, D, delta, ClaimVariant.PROOF)
            statement = loss_percent_gpzeta(gamma, n_tilde, n, D, delta, ClaimVariant.STATEMENT)
            oracle = loss_oracle(Protocol.HTLC_GP_ZETA, n, n_tilde, gamma, D, delta)
            rows.append({"claim": "htlc-gp-zeta", "gamma": gamma, "k": k, "zeta": zeta, "n": n, "n_max": n_tilde,
                         "loss_pct": proof, "statement": statement, "oracle": oracle,
                         "rel_error": _rel(proof, oracle)})
    return rows

def _rel(a, b):
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))

###
# Network experiments
###

@dataclass(frozen=True)
class ExperimentConfig:
    snapshot:       str                              = "synthetic"
    balance_mode:   BalanceMode                      = BalanceMode.split
    nodes:          int                              = SYNTHETIC_NODES
    protocols:      Tuple[Protocol, ...]             = (Protocol.HTLC, Protocol.HTLC_GP, Protocol.HTLC_GP_ZETA)
    gammas:         Tuple[float, ...]                = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
    kzeta:          Tuple[Tuple[float, float], ...]  = ((0.25, 0.025),)
    budgets:        Tuple[int, ...]                  = (100_000_000,)
    alphas:         Tuple[int, ...]                  = (50000,)
    n:              int                              = 20
    D:              int                              = DEFAULT_D
    delta:          int                              = DEFAULT_DELTA
    C:              int                              = 250000
    strategy:       Strategy                         = Strategy.grief
    workload:       int                              = 3000
    workloads:      Tuple[int, ...]                  = (100, 1000, 5000)
    min_len:        int                              = 5
    max_len:        int                              = 20
    thetas:         Tuple[float, ...]                = (0.05, 0.5)
    q:              float                            = 0.7
    seed:           Optional[int]                    = None
    jobs:           int                              = 1
    max_expansions: int                              = DEFAULT_MAX_EXPANSIONS
    economics:      EconomicParams                   = field(default_factory=EconomicParams)

    def __post_init__(self):
        for name in ("protocols", "gammas", "budgets", "alphas", "workloads"):
            if not getattr(self, name):
                raise ValueError(name + " must not be empty")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("path lengths must satisfy 1 <= min_len <= max_len")

def load_graph(config):
    if config.snapshot == "synthetic":
        return synthetic_graph(SYNTHETIC_SEED, config.nodes, config.balance_mode)
    return load_snapshot(config.snapshot, config.balance_mode)

@dataclass
class CapacityReport:
    protocol:   Protocol
    gamma:      float
    k:          Optional[float]
    zeta:       Optional[float]
    n_max:      int
    budget:     int
    alpha:      int
    locked:     int = 0
    baseline:   int = 0     # HTLC victim lock on the same graph and seed
    instances:  int = 0
    infeasible: int = 0
    aborted:    int = 0

    @property
    def ratio_locked(self):
        return self.locked / self.baseline if self.baseline else 0.0

    @property
    def loss_pct(self):
        return 1 - self.ratio_locked if self.baseline else 0.0

    def to_row(self):
        return {
            "protocol": self.protocol.value,
            "gamma": self.gamma,
            "k": self.k,
            "zeta": self.zeta,
            "n_max": self.n_max,
            "budget": self.budget,
            "alpha": self.alpha,
            "locked": self.locked,
            "htlc_locked": self.baseline,
            "ratio_locked": self.ratio_locked,
            "loss_pct": self.loss_pct,
            "instances": self.instances,
            "infeasible": self.infeasible,
            "aborted": self.aborted,
        }

def _attacker(config, protocol, penalty, budget, alpha):
    return AttackerConfig(protocol=protocol, alpha=alpha, n=config.n, budget=budget, C=config.C, penalty=penalty,
                          strategy=config.strategy, D=config.D, delta=config.delta, economics=config.economics,
                          max_expansions=config.max_expansions)

def accumulate_attacks(graph, attacker, seed):
    """Mount attacks from corrupt nodes on one graph until the budget runs out; locks pile up.

    Only a fully locked self-payment spends a budget slot. Candidates without
    a feasible cycle, or whose lock aborts, are passed over.
    """
    rng = random.Random(seed)
    report = CapacityReport(attacker.protocol, attacker.penalty.gamma, attacker.penalty.k,
                            attacker.penalty.zeta if attacker.penalty.guaranteed else None, attacker.target_length,
                            attacker.budget, attacker.alpha)
    slots = attacker.affordable
    for corrupt in corrupt_candidates(graph):
        if slots is not None and report.instances >= slots:
            break
        instance = plan_attack(graph, corrupt, attacker)
        if instance is None:
            logger.warning("no feasible attack cycle through " + str(corrupt) + ", budget slot kept")
            report.infeasible += 1
            continue
        try:
            locked = mount_attack(graph, instance, attacker, rng)
        except LockAborted as e:
            logger.warning("attack through " + str(corrupt) + " aborted at hop " + str(e.hop) + ": " + e.code.value)
            report.aborted += 1
            continue
        report.instances += 1
        report.locked += locked.victim_lock()
    return report

def _capacity_point(args):
    graph, attacker, seed, baseline = args
    report = accumulate_attacks(graph, attacker, seed)
    report.baseline = baseline
    logger.info(attacker.protocol.value + " gamma=" + repr(attacker.penalty.gamma) + ": " + str(report.locked)
                + " locked by " + str(report.instances) + " instances")
    return report

def run_capacity_experiment(config, graph=None):
    """Victim capacity locked per protocol setting against the HTLC baseline."""
    if config.seed is None:
        raise ValueError("capacity needs a seed")
    graph = graph or load_graph(config)
    reports: List[CapacityReport] = []

    for budget in config.budgets:
        for alpha in config.alphas:
            htlc = accumulate_attacks(graph.copy(), _attacker(config, Protocol.HTLC, PenaltyParams.plain(0.0),
                                                              budget, alpha), config.seed)
            if htlc.instances == 0:
                raise InfeasibleExperiment("no feasible attack instance for budget " + str(budget) + ", alpha " + str(alpha))
            htlc.baseline = htlc.locked
            reports.append(htlc)

            points = []
            if Protocol.HTLC_GP in config.protocols:
                for gamma in config.gammas:
                    points.append(_attacker(config, Protocol.HTLC_GP, PenaltyParams.plain(gamma), budget, alpha))
            for k, zeta in config.kzeta:
                penalty = PenaltyParams.for_guarantee(k, zeta, config.D, config.delta)
                if Protocol.HTLC_GP_ZETA in config.protocols:
                    points.append(_attacker(config, Protocol.HTLC_GP_ZETA, penalty, budget, alpha))
                if Protocol.HTLC_GP in config.protocols and penalty.gamma not in config.gammas:
                    points.append(_attacker(config, Protocol.HTLC_GP, PenaltyParams(penalty.gamma, k=k), budget, alpha))

            work = [(graph.copy(), attacker, config.seed, htlc.locked) for attacker in points]
            reports.extend(parallel_map(_capacity_point, work, config.jobs))
    return reports

def random_walk(graph, source, length, rng):
    """Simple walk of `length` hops over open channels, or None if it gets stuck."""
    hops = [source]
    seen = {source}
    for _ in range(length):
        options = [w for w in graph.neighbors(hops[-1]) if w not in seen]
        if not options:
            return None
        w = options[int(rng.integers(len(options)))]
        hops.append(w)
        seen.add(w)
    return hops

def generate_workload(graph, count, seed, min_len=5, max_len=20, amount_range=AMOUNT_RANGE):
    """Random transactions as (hops, amount); walks that get stuck are redrawn."""
    rng = np.random.default_rng(seed)
    nodes = graph.nodes
    workload = []
    for _ in range(count):
        source = nodes[int(rng.integers(len(nodes)))]
        length = int(rng.integers(min_len, max_len + 1))
        hops = None
        for _ in range(WALK_RETRIES):
            hops = random_walk(graph, source, length, rng)
            if hops:
                break
        amount = int(rng.integers(amount_range[0], amount_range[1] + 1))
        if hops:
            workload.append((tuple(hops), amount))
    return workload

def _path(hops, amount, config):
    kappa = len(hops) - 1
    return PaymentPath(tuple(hops), tuple(hop_amounts(amount, kappa, config.economics)),
                       timeout_schedule(kappa, config.D, config.delta).timeouts)

def _settle(graph, path, protocol, penalty, rng, economics, beliefs=None, q=0.7, enforce_minimum=False):
    """Lock and release one payment; raises LockAborted when it fails."""
    if protocol is Protocol.HTLC:
        locked = lock_htlc(graph, path, rng, beliefs=beliefs, economics=economics, q=q)
    else:
        envelope = preprocess(path, penalty, rng, phi=path.kappa if penalty.guaranteed else None)
        locked = lock_payment(graph, envelope, beliefs=beliefs, economics=economics, enforce_minimum=enforce_minimum)
    release(graph, locked, PayeeAction.RELEASE_X, economics=economics)

def replay_workload(graph, workload, protocol, penalty, config):
    rng = random.Random(config.seed)
    done = 0
    for hops, amount in workload:
        try:
            _settle(graph, _path(hops, amount, config), protocol, penalty, rng, config.economics)
            done += 1
        except LockAborted as e:
            logger.debug("transaction failed at hop " + str(e.hop) + ": " + e.code.value)
    return done

def _success_point(args):
    graph, workload, gamma, config = args
    done = replay_workload(graph, workload, Protocol.HTLC_GP, PenaltyParams.plain(gamma), config)
    logger.info("success-rate gamma=" + repr(gamma) + ": " + str(done) + "/" + str(len(workload)))
    return done

def run_success_rate(config, graph=None):
    """Share of a random workload HTLC-GP completes relative to HTLC, per gamma."""
    if config.seed is None:
        raise ValueError("success-rate needs a seed")
    graph = graph or load_graph(config)
    workload = generate_workload(graph, config.workload, config.seed, config.min_len, config.max_len)
    if not workload:
        raise InfeasibleExperiment("no random walk of the requested lengths exists")

    htlc = replay_workload(graph.copy(), workload, Protocol.HTLC, PenaltyParams.plain(0.0), config)
    done = parallel_map(_success_point, [(graph.copy(), workload, g, config) for g in config.gammas], config.jobs)
    return [{
        "gamma": gamma,
        "transactions": len(workload),
        "htlc_success": htlc,
        "gp_success": gp,
        "success_ratio": gp / htlc if htlc else 0.0,
    } for gamma, gp in zip(config.gammas, done)]

def theta_grid(step):
    if not 0 < step <= 1:
        raise ValueError("theta step must lie in (0, 1]")
    count = int(round(1 / step))
    return [round(min(1.0, i * step), 12) for i in range(count + 1)]

def run_game_sweep(base, amounts, rates, theta_step=0.005, protocols=(Protocol.HTLC, Protocol.HTLC_GP)):
    """Belief sweeps of both forwarding games; returns the curve rows and one flip row per game."""
    thetas = theta_grid(theta_step)
    rows, flips = [], []
    for protocol in protocols:
        for amount in amounts:
            for rate in rates:
                spec = replace(base, protocol=protocol, alpha=amount, economics=replace(base.economics, rate=rate))
                rows.extend(sweep_rows(spec, thetas))
                flips.append({"protocol": protocol.value, "amount": amount, "rate": rate,
                              "theta": cutoff_theta(spec)})
    return rows, flips

def _route_len(protocol, penalty):
    if protocol is Protocol.HTLC_GP_ZETA:
        return min(ROUTE_MAX_LEN, penalty.n_max)
    return ROUTE_MAX_LEN

def _failing_channel(path, hop):
    i = min(hop, path.kappa - 1)
    return frozenset(path.hop(i))

def run_requests(graph, requests, protocol, penalty, config, theta=None):
    """Route and settle each (src, dst, amount) request; GP retries around a dry channel."""
    rng = random.Random(config.seed)
    rational = theta is not None
    max_len = _route_len(protocol, penalty)
    attempts = ROUTE_RETRIES if protocol.penalized else 1
    completed = 0
    aborts = Counter()

    for src, dst, amount in requests:
        excluded = set()
        for _ in range(attempts):
            path = find_route(graph, src, dst, amount, max_len, config.economics, config.D, config.delta, excluded)
            if path is None:
                aborts["NO_ROUTE"] += 1
                break
            try:
                _settle(graph, path, protocol, penalty, rng, config.economics, beliefs=theta, q=config.q,
                        enforce_minimum=rational)
                completed += 1
                break
            except LockAborted as e:
                if e.code is not AbortCode.INSUFFICIENT_REMAIN:
                    aborts[e.code.value] += 1
                    break
                excluded.add(_failing_channel(path, e.hop))
        else:
            aborts[AbortCode.INSUFFICIENT_REMAIN.value] += 1
    return completed, aborts

def generate_requests(graph, count, seed, amount_range=AMOUNT_RANGE):
    rng = np.random.default_rng(seed)
    nodes = graph.nodes
    requests = []
    while len(requests) < count:
        a, b = rng.integers(len(nodes), size=2)
        if a == b:
            continue
        requests.append((nodes[int(a)], nodes[int(b)], int(rng.integers(amount_range[0], amount_range[1] + 1))))
    return requests

def _penalty_for(protocol, config):
    if protocol is Protocol.HTLC:
        return PenaltyParams.plain(0.0)
    k, zeta = config.kzeta[0]
    guaranteed = PenaltyParams.for_guarantee(k, zeta, config.D, config.delta)
    if protocol is Protocol.HTLC_GP:
        return PenaltyParams.plain(guaranteed.gamma)
    return guaranteed

def run_scalability(config, graph=None):
    """Wall time and completions per workload size, protocol and forwarding mode."""
    if config.seed is None:
        raise ValueError("scalability needs a seed")
    graph = graph or load_graph(config)
    rows = []
    modes = [("altruistic", None)] + [("rational", theta) for theta in config.thetas]
    for size in config.workloads:
        requests = generate_requests(graph, size, config.seed)
        for mode, theta in modes:
            for protocol in config.protocols:
                penalty = _penalty_for(protocol, config)
                start = time.perf_counter()
                completed, aborts = run_requests(graph.copy(), requests, protocol, penalty, config, theta)
                elapsed = time.perf_counter() - start
                logger.info("scalability " + mode + " " + protocol.value + " " + str(size) + ": "
                            + str(completed) + " completed in " + "%.3f" % elapsed + "s")
                rows.append({
                    "workload": size,
                    "mode": mode,
                    "theta": theta,
                    "protocol": protocol.value,
                    "gamma": penalty.gamma,
                    "completed": completed,
                    "aborted": sum(aborts.values()),
                    "aborts_by_code": json.dumps(dict(aborts), sort_keys=True),
                    "wall_time_s": elapsed,
                })
    return rows

###
# Report files
###

def _sort_key(row, columns):
    key = []
    for c in columns:
        v = row.get(c)
        if v is None:
            key.append((0, 0, ""))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            key.append((1, v, ""))
        else:
            key.append((2, 0, str(v)))
    return key

def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v

def write_csv(path, rows, columns=None):
    """One row per sweep point, sorted so reruns produce the same bytes."""
    columns = columns or sorted({c for row in rows for c in row})
    with open(path, "w", newline="") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in sorted(rows, key=lambda r: _sort_key(r, columns)):
            writer.writerow({c: _cell(row.get(c)) for c in columns})

def write_json(path, summary):
    with open(path, "w") as f:
        f.write(json.dumps(summary, indent=2, sort_keys=True))
        f.write("\n")
