import copy
import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Tuple

import networkx as nx
import numpy as np

from .common import BalanceMode, ChannelError, LedgerEvent, LedgerKind, SnapshotError
from .economics import DEFAULT_D, DEFAULT_DELTA, EconomicParams, hop_amounts, timeout_schedule
from .penalty import cumulative_penalty
from .util import do_http, round_half_up

logger = logging.getLogger(__name__)

DEFAULT_LIFETIME = 1000000

SNAPSHOT_FIELDS = ["src", "dst", "capacity_sat", "opened_at", "lifetime"]

# synthetic fallback graph
SYNTHETIC_SEED = 2019
SYNTHETIC_NODES = 2000
SYNTHETIC_PENDANT_SHARE = 0.2
SYNTHETIC_MEDIAN_CAPACITY = 500000
SYNTHETIC_MEAN_CAPACITY = 2000000
SYNTHETIC_MIN_CAPACITY = 20000

DEFAULT_MAX_EXPANSIONS = 5000

@dataclass
class Channel:
    a:               str
    b:               str
    locked_ab:       int                 # funding contributed by a
    locked_ba:       int                 # funding contributed by b
    remain_ab:       int                 # spendable by a towards b
    remain_ba:       int                 # spendable by b towards a
    opened_at:       int = 0             # block height
    lifetime:        int = DEFAULT_LIFETIME
    inflight:        int = 0             # held by live contracts
    mining_fee_paid: int = 0
    open:            bool = True

    @property
    def capacity(self):
        return self.locked_ab + self.locked_ba

    @property
    def key(self):
        return (self.a, self.b)

    def remain(self, frm):
        if frm == self.a:
            return self.remain_ab
        if frm == self.b:
            return self.remain_ba
        raise KeyError(str(frm) + " is not an endpoint of " + str(self.key))

    def _add(self, side, amount):
        if side == self.a:
            self.remain_ab += amount
        elif side == self.b:
            self.remain_ba += amount
        else:
            raise KeyError(str(side) + " is not an endpoint of " + str(self.key))

    def conserved(self):
        return self.remain_ab + self.remain_ba + self.inflight + self.mining_fee_paid == self.capacity

@dataclass(frozen=True)
class PaymentPath:
    hops:     Tuple[str, ...]   # U_0 ... U_kappa
    amounts:  Tuple[int, ...]   # forwarded on hop i
    timeouts: Tuple[int, ...]   # t_i of hop i

    def __post_init__(self):
        if len(self.hops) < 2:
            raise ValueError("a path needs at least one hop")
        if len(self.amounts) != len(self.hops) - 1 or len(self.timeouts) != len(self.hops) - 1:
            raise ValueError("amounts and timeouts need one entry per hop")

    @property
    def kappa(self):
        return len(self.hops) - 1

    @property
    def is_cycle(self):
        return self.hops[0] == self.hops[-1]

    def hop(self, i):
        return self.hops[i], self.hops[i + 1]

def split_funding(capacity, balance_mode):
    if balance_mode == BalanceMode.split:
        return capacity // 2, capacity - capacity // 2
    return capacity, 0

class ChannelGraph:
    """The channel network: a networkx graph whose edges carry a Channel.

    All balance changes go through lock/release/close so that every change
    lands in `events`.
    """

    def __init__(self, balance_mode=BalanceMode.split):
        self.g = nx.Graph()
        self.balance_mode = balance_mode
        self.clock = 0
        self.events = []
        self.closed = 0     # closed channels; while 0 the plain graph is the open view

    ###
    # Structure
    ###

    @property
    def nodes(self):
        return sorted(self.g.nodes)

    def add_node(self, u):
        self.g.add_node(u)

    def has_node(self, u):
        return self.g.has_node(u)

    def add_channel(self, a, b, capacity, opened_at=0, lifetime=DEFAULT_LIFETIME, balance_mode=None):
        if a == b:
            raise ValueError("channel endpoints must differ")
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.g.has_edge(a, b):
            raise ValueError("duplicate channel " + str(a) + "-" + str(b))

        fund_a, fund_b = split_funding(int(capacity), balance_mode or self.balance_mode)
        ch = Channel(a, b, fund_a, fund_b, fund_a, fund_b, opened_at, lifetime)
        self.g.add_edge(a, b, channel=ch)
        return ch

    def remove_channel(self, a, b):
        self.g.remove_edge(a, b)

    def has_channel(self, a, b):
        return self.g.has_edge(a, b)

    def has_open_channel(self, a, b):
        return self.g.has_edge(a, b) and self.g.edges[a, b]["channel"].open

    def channel(self, a, b):
        try:
            return self.g.edges[a, b]["channel"]
        except KeyError:
            raise ChannelError("no channel between " + str(a) + " and " + str(b))

    def channels(self):
        return sorted((d["channel"] for _, _, d in self.g.edges(data=True)), key=lambda ch: ch.key)

    def neighbors(self, u):
        """Counterparties of u over open channels, in id order."""
        return sorted(w for w in self.g.neighbors(u) if self.g.edges[u, w]["channel"].open)

    def degree(self, u):
        if not self.closed:
            return self.g.degree(u)
        return len(self.neighbors(u))

    def open_view(self):
        if not self.closed:
            return self.g
        return nx.subgraph_view(self.g, filter_edge=lambda a, b: self.g.edges[a, b]["channel"].open)

    def remain(self, frm, to):
        if not self.g.has_edge(frm, to):
            return 0
        ch = self.g.edges[frm, to]["channel"]
        return ch.remain(frm) if ch.open else 0

    def balance(self, u):
        return sum(self.g.edges[u, w]["channel"].remain(u) for w in self.g.neighbors(u))

    def total_funds(self):
        """Remain plus in-flight plus mining fees over all channels; constant over any run."""
        return sum(ch.remain_ab + ch.remain_ba + ch.inflight + ch.mining_fee_paid for ch in self.channels())

    def copy(self):
        return copy.deepcopy(self)

    ###
    # State transitions
    ###

    def advance(self, block):
        if block < self.clock:
            raise ValueError("clock cannot move backwards from " + str(self.clock) + " to " + str(block))
        self.clock = block

    def _live(self, a, b):
        ch = self.channel(a, b)
        if not ch.open:
            raise ChannelError("channel " + str(ch.key) + " is closed")
        return ch

    def _record(self, ch, kind, party, amount, contract_id):
        self.events.append(LedgerEvent(self.clock, ch.key, kind, party, int(amount), contract_id))

    def lock(self, frm, to, amount, contract_id=None):
        """Move `amount` from frm's side of the channel into the in-flight pool."""
        ch = self._live(frm, to)
        if amount < 0:
            raise ValueError("cannot lock a negative amount")
        if ch.remain(frm) < amount:
            raise ChannelError("insufficient remain on " + str(ch.key) + ": " + str(ch.remain(frm)) + " < " + str(amount))
        ch._add(frm, -amount)
        ch.inflight += amount
        self._record(ch, LedgerKind.lock, frm, amount, contract_id)

    def release(self, locker, counterparty, amount, to_counterparty, contract_id=None, onchain=False):
        """Pay `amount` locked by `locker` out of the in-flight pool.

        It goes back to the locker, or to the counterparty when
        `to_counterparty` is set.
        """
        ch = self._live(locker, counterparty)
        if amount > ch.inflight:
            raise ChannelError("release of " + str(amount) + " exceeds in-flight " + str(ch.inflight) + " on " + str(ch.key))
        recipient = counterparty if to_counterparty else locker
        ch.inflight -= amount
        ch._add(recipient, amount)
        self._record(ch, LedgerKind.settle if onchain else LedgerKind.release, recipient, amount, contract_id)

    def close(self, a, b, closer, mining_fee=0, contract_id=None):
        ch = self._live(a, b)
        fee = min(mining_fee, ch.remain(closer))
        if fee < mining_fee:
            logger.debug("mining fee on " + str(ch.key) + " capped at " + str(fee) + " of " + str(mining_fee)
                         + ", the remain of " + str(closer))
        ch._add(closer, -fee)
        ch.mining_fee_paid += fee
        ch.open = False
        self.closed += 1
        self._record(ch, LedgerKind.close, closer, fee, contract_id)
        logger.debug("closed channel " + str(ch.key) + " at block " + str(self.clock) + " by " + str(closer))

###
# Snapshots
###

def _int_field(record, key, where, default=None):
    value = record.get(key)
    if value is None or value == "":
        if default is None:
            raise SnapshotError(where + ": missing " + key)
        return default
    try:
        return int(float(value))
    except (TypeError, ValueError):
        raise SnapshotError(where + ": bad " + key + " " + repr(value))

def _add_record(graph, record, where):
    src = record.get("src")
    dst = record.get("dst")
    if not src or not dst:
        raise SnapshotError(where + ": missing src or dst")
    src, dst = str(src), str(dst)
    capacity = _int_field(record, "capacity_sat", where)
    if capacity <= 0:
        raise SnapshotError(where + ": capacity must be positive")
    opened_at = _int_field(record, "opened_at", where, 0)
    lifetime = _int_field(record, "lifetime", where, DEFAULT_LIFETIME)
    try:
        graph.add_channel(src, dst, capacity, opened_at, lifetime)
    except ValueError as e:
        raise SnapshotError(where + ": " + str(e))

def parse_snapshot(text, balance_mode=BalanceMode.split, name="snapshot"):
    graph = ChannelGraph(balance_mode)

    if text.lstrip().startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as e:
            raise SnapshotError(name + " line " + str(e.lineno) + ": " + e.msg)
        for i, record in enumerate(records):
            if not isinstance(record, dict):
                raise SnapshotError(name + " record " + str(i + 1) + ": not an object")
            _add_record(graph, record, name + " record " + str(i + 1))
    else:
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or not {"src", "dst", "capacity_sat"} <= set(reader.fieldnames):
            raise SnapshotError(name + " line 1: header must name src,dst,capacity_sat")
        for record in reader:
            if None in record or None in record.values():
                raise SnapshotError(name + " line " + str(reader.line_num) + ": wrong number of fields")
            _add_record(graph, record, name + " line " + str(reader.line_num))

    logger.info("loaded " + name + ": " + str(graph.g.number_of_nodes()) + " nodes, " + str(graph.g.number_of_edges()) + " channels")
    return graph

def load_snapshot(source, balance_mode=BalanceMode.split):
    if source.startswith("http://") or source.startswith("https://"):
        return parse_snapshot(do_http("GET", source).text, balance_mode, source)
    if not os.path.isfile(source):
        raise SnapshotError("snapshot not found: " + source)
    with open(source, "r") as fp:
        return parse_snapshot(fp.read(), balance_mode, source)

def dump_snapshot(graph):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SNAPSHOT_FIELDS)
    for ch in graph.channels():
        writer.writerow([ch.a, ch.b, ch.capacity, ch.opened_at, ch.lifetime])
    return out.getvalue()

def save_snapshot(graph, path):
    with open(path, "w") as fp:
        fp.write(dump_snapshot(graph))

def node_id(i):
    return "N%05d" % i

def synthetic_graph(seed=SYNTHETIC_SEED, nodes=SYNTHETIC_NODES, balance_mode=BalanceMode.split,
                    pendant_share=SYNTHETIC_PENDANT_SHARE):
    """Scale-free stand-in for a network snapshot.

    A Barabasi-Albert core with pendant nodes attached by degree, capacities
    drawn from a lognormal with the configured median and mean.
    """
    pendants = int(nodes * pendant_share)
    core_n = nodes - pendants
    core = nx.barabasi_albert_graph(core_n, 2, seed=seed)
    rng = np.random.default_rng(seed)

    edges = [tuple(sorted(e)) for e in core.edges()]
    weights = np.array([core.degree(i) for i in range(core_n)], dtype=float)
    anchors = rng.choice(core_n, size=pendants, p=weights / weights.sum())
    edges += [(int(anchor), core_n + j) for j, anchor in enumerate(anchors)]

    mu = math.log(SYNTHETIC_MEDIAN_CAPACITY)
    sigma = math.sqrt(2 * (math.log(SYNTHETIC_MEAN_CAPACITY) - mu))
    capacities = np.maximum(rng.lognormal(mu, sigma, size=len(edges)), SYNTHETIC_MIN_CAPACITY).astype(int)

    graph = ChannelGraph(balance_mode)
    for (a, b), capacity in zip(edges, capacities):
        graph.add_channel(node_id(a), node_id(b), int(capacity))
    logger.info("synthetic graph seed=" + str(seed) + ": " + str(nodes) + " nodes, " + str(len(edges)) + " channels")
    return graph

###
# Routing
###

def find_route(graph, src, dst, amount, max_len, economics=None, D=DEFAULT_D, delta=DEFAULT_DELTA, excluded=None):
    """Shortest feasible path from src to dst, smallest ids first on ties.

    A reverse BFS from dst labels each node with the fewest hops it needs;
    the amount a hop must carry only grows with its distance to dst, so the
    first label a node receives is also its shortest feasible one.
    """
    economics = economics or EconomicParams()
    excluded = excluded or set()
    if src == dst or not graph.has_node(src) or not graph.has_node(dst) or max_len < 1:
        return None

    # need[d]: amount carried by a hop that is d hops away from dst
    ladder = hop_amounts(amount, max_len, economics)
    need = [None] + ladder[::-1]

    def usable(u, w, d):
        return frozenset((u, w)) not in excluded and graph.remain(u, w) >= need[d]

    dist: Dict[str, int] = {dst: 0}
    frontier = [dst]
    for d in range(1, max_len + 1):
        nxt = []
        for w in frontier:
            for u in graph.neighbors(w):
                if u not in dist and usable(u, w, d):
                    dist[u] = d
                    nxt.append(u)
        if src in dist or not nxt:
            break
        frontier = nxt

    if src not in dist:
        logger.debug("no route " + str(src) + " -> " + str(dst) + " for " + str(amount) + " within " + str(max_len) + " hops")
        return None

    kappa = dist[src]
    hops = [src]
    u = src
    for d in range(kappa, 0, -1):
        u = next(w for w in graph.neighbors(u) if dist.get(w) == d - 1 and usable(u, w, d))
        hops.append(u)

    return PaymentPath(tuple(hops), tuple(ladder[max_len - kappa:]), timeout_schedule(kappa, D, delta).timeouts)

def penalty_chain(amounts, timeouts, gamma):
    """Rounded cumulative penalty locked on each hop when no blinding is applied."""
    return [round_half_up(cumulative_penalty(amounts, timeouts, gamma, i + 1)) for i in range(len(amounts))]

def find_attack_cycle(graph, corrupt, target_len, amount=0, economics=None, gamma=0.0, D=DEFAULT_D, delta=DEFAULT_DELTA,
                      amount_for_length=None, max_expansions=DEFAULT_MAX_EXPANSIONS):
    """Longest simple cycle through `corrupt` of at most target_len hops.

    Every hop must carry its forwarded amount, and with gamma > 0 the
    downstream side must also hold the penalty it locks in the first round.
    The amount paid may depend on the cycle length via `amount_for_length`.

    The cycle leaves `corrupt` towards one neighbour and returns from
    another; the walk in between is pruned by hop distances to the closing
    neighbour in the graph without `corrupt`.
    """
    economics = economics or EconomicParams()
    if not graph.has_node(corrupt) or graph.degree(corrupt) < 2:
        return None

    rest = nx.subgraph_view(graph.open_view(), filter_node=lambda u: u != corrupt)
    ends = graph.neighbors(corrupt)
    dist = {last: nx.single_source_shortest_path_length(rest, last, cutoff=target_len) for last in ends}
    adjacency: Dict[str, list] = {}

    for length in range(target_len, 2, -1):
        value = amount_for_length(length) if amount_for_length else amount
        amounts = hop_amounts(value, length, economics)
        timeouts = timeout_schedule(length, D, delta).timeouts
        penalties = penalty_chain(amounts, timeouts, gamma) if gamma > 0 else [0] * length
        search = _CycleSearch(graph, corrupt, amounts, penalties, adjacency, max_expansions)

        for first in ends:
            if not search.feasible(corrupt, first, 0):
                continue
            for last in ends:
                if last == first or dist[last].get(first, math.inf) > length - 2:
                    continue
                if not search.feasible(last, corrupt, length - 1):
                    continue
                hops = search.run(first, last, dist[last])
                if hops:
                    return PaymentPath(tuple(hops), tuple(amounts), timeouts)
    return None

class _CycleSearch:
    """Depth-first walk for one cycle length, with an expansion budget per closing pair."""

    def __init__(self, graph, corrupt, amounts, penalties, adjacency, max_expansions):
        self.graph = graph
        self.corrupt = corrupt
        self.amounts = amounts
        self.penalties = penalties
        self.adjacency = adjacency
        self.max_expansions = max_expansions

    def feasible(self, u, w, j):
        return self.graph.remain(u, w) >= self.amounts[j] and self.graph.remain(w, u) >= self.penalties[j]

    def neighbors(self, u):
        if u not in self.adjacency:
            self.adjacency[u] = self.graph.neighbors(u)
        return self.adjacency[u]

    def run(self, first, last, dist):
        length = len(self.amounts)
        path = [self.corrupt, first]
        visited = {self.corrupt, first}
        budget = [self.max_expansions]

        # path[p] is the node at position p; hop p leaves it
        def extend(u, p):
            if budget[0] <= 0:
                return False
            budget[0] -= 1

            left = length - 1 - p
            if left == 0:
                return u == last
            for w in self.neighbors(u):
                if w in visited or dist.get(w, math.inf) > left - 1 or (w == last and left > 1):
                    continue
                if not self.feasible(u, w, p):
                    continue
                visited.add(w)
                path.append(w)
                if extend(w, p + 1):
                    return True
                path.pop()
                visited.remove(w)
            return False

        if extend(first, 1):
            path.append(self.corrupt)
            return path
        if budget[0] <= 0:
            logger.warning("cycle search " + str(self.corrupt) + " via " + str(first) + ".." + str(last) + " at length "
                           + str(length) + " gave up after " + str(self.max_expansions) + " expansions")
        return None
