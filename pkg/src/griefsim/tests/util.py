import random

from ..common import BalanceMode
from ..economics import EconomicParams, hop_amounts, timeout_schedule
from ..netmodel import ChannelGraph, PaymentPath, node_id

BIG = 10_000_000

NO_FEES = EconomicParams(base_fee=0.0, fee_rate=0.0)

def _graph(edges, capacity=BIG, balance_mode=BalanceMode.split):
	graph = ChannelGraph(balance_mode)
	for a, b in edges:
		graph.add_channel(node_id(a), node_id(b), capacity)
	return graph

def line_graph(n=4, capacity=BIG, balance_mode=BalanceMode.split):
	"""N00000 - N00001 - ... with n nodes."""
	return _graph([(i, i + 1) for i in range(n - 1)], capacity, balance_mode)

def ring_graph(n=5, capacity=BIG, balance_mode=BalanceMode.split):
	return _graph([(i, (i + 1) % n) for i in range(n)], capacity, balance_mode)

def triangle_graph(capacity=BIG):
	return ring_graph(3, capacity)

def diamond_graph(capacity=BIG):
	"""0-1-3 and 0-2-3, plus 1-2."""
	return _graph([(0, 1), (0, 2), (1, 3), (2, 3), (1, 2)], capacity)

def star_graph(leaves=5, capacity=BIG):
	"""Hub N00000 with pendant leaves N00001..."""
	return _graph([(0, i) for i in range(1, leaves + 1)], capacity)

def make_path(nodes, amount, economics=NO_FEES, D=100, delta=100):
	hops = tuple(node_id(i) if isinstance(i, int) else i for i in nodes)
	kappa = len(hops) - 1
	return PaymentPath(hops, tuple(hop_amounts(amount, kappa, economics)), timeout_schedule(kappa, D, delta).timeouts)

def seeded(seed=1):
	return random.Random(seed)
