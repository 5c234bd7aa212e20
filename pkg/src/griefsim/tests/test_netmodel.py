import os
import tempfile
import unittest
from unittest import mock

import requests

from .. import netmodel
from ..common import BalanceMode, ChannelError, LedgerKind, SnapshotError
from ..economics import EconomicParams, hop_amounts
from ..netmodel import ChannelGraph, node_id
from ..util import HTTP_RETRIES

from .util import diamond_graph, line_graph, ring_graph, star_graph, triangle_graph

SNAPSHOT_CSV = """src,dst,capacity_sat,opened_at,lifetime
A,B,1000,5,2000
B,C,3000,,
"""

class TestChannelGraph(unittest.TestCase):

    def test_01_funding(self):
        g = ChannelGraph(BalanceMode.split)
        ch = g.add_channel("A", "B", 101)
        self.assertEqual((ch.remain_ab, ch.remain_ba), (50, 51))
        self.assertEqual(ch.capacity, 101)

        g2 = ChannelGraph(BalanceMode.unilateral)
        ch2 = g2.add_channel("A", "B", 101)
        self.assertEqual((g2.remain("A", "B"), g2.remain("B", "A")), (101, 0))

        with self.assertRaises(ValueError):
            g.add_channel("B", "A", 10)
        with self.assertRaises(ValueError):
            g.add_channel("A", "A", 10)
        with self.assertRaises(ValueError):
            g.add_channel("A", "C", 0)

    def test_02_lock_release_close(self):
        g = ChannelGraph()
        g.add_channel("A", "B", 1000)
        total = g.total_funds()

        g.lock("A", "B", 200, "c1")
        self.assertEqual(g.remain("A", "B"), 300)
        self.assertEqual(g.channel("A", "B").inflight, 200)

        g.release("A", "B", 150, True, "c1")
        g.release("A", "B", 50, False, "c1")
        self.assertEqual(g.remain("B", "A"), 650)
        self.assertEqual(g.remain("A", "B"), 350)
        self.assertEqual(g.total_funds(), total)
        self.assertTrue(g.channel("A", "B").conserved())

        with self.assertRaises(ChannelError):
            g.lock("A", "B", 10000)
        with self.assertRaises(ChannelError):
            g.release("A", "B", 1, True)

        g.advance(7)
        g.close("A", "B", "A", 154)
        self.assertEqual(g.remain("A", "B"), 0)
        self.assertFalse(g.has_open_channel("A", "B"))
        self.assertEqual(g.neighbors("A"), [])
        self.assertEqual(g.total_funds(), total)
        self.assertEqual(g.channel("A", "B").mining_fee_paid, 154)

        with self.assertRaises(ChannelError):
            g.lock("A", "B", 1)
        with self.assertRaises(ChannelError):
            g.channel("A", "Z")
        with self.assertRaises(ValueError):
            g.advance(3)

        kinds = [e.kind for e in g.events]
        self.assertEqual(kinds, [LedgerKind.lock, LedgerKind.release, LedgerKind.release, LedgerKind.close])
        self.assertEqual(g.events[-1].block, 7)

    def test_03_copy_is_independent(self):
        g = line_graph(3)
        c = g.copy()
        c.lock(node_id(0), node_id(1), 100)
        self.assertEqual(g.remain(node_id(0), node_id(1)), 5_000_000)
        self.assertEqual(c.remain(node_id(0), node_id(1)), 4_999_900)

    def test_04_close_caps_fee_at_remain(self):
        g = ChannelGraph()
        g.add_channel("A", "B", 100)
        with self.assertLogs("griefsim.netmodel", "DEBUG") as logs:
            g.close("A", "B", "A", 154)
        self.assertTrue(any("capped at 50 of 154" in line for line in logs.output))
        self.assertEqual(g.channel("A", "B").mining_fee_paid, 50)
        self.assertEqual(g.events[-1].amount_sat, 50)
        self.assertTrue(g.channel("A", "B").conserved())

class TestSnapshot(unittest.TestCase):

    def test_01_parse_csv(self):
        g = netmodel.parse_snapshot(SNAPSHOT_CSV)
        self.assertEqual(g.nodes, ["A", "B", "C"])
        ch = g.channel("A", "B")
        self.assertEqual((ch.opened_at, ch.lifetime), (5, 2000))
        self.assertEqual(g.channel("B", "C").lifetime, netmodel.DEFAULT_LIFETIME)

    def test_02_parse_json(self):
        g = netmodel.parse_snapshot('[{"src": "A", "dst": "B", "capacity_sat": 10}]', BalanceMode.unilateral)
        self.assertEqual(g.remain("A", "B"), 10)

    def test_03_errors_name_the_line(self):
        with self.assertRaisesRegex(SnapshotError, "line 3"):
            netmodel.parse_snapshot("src,dst,capacity_sat\nA,B,10\nB,C,x\n")
        with self.assertRaisesRegex(SnapshotError, "duplicate"):
            netmodel.parse_snapshot("src,dst,capacity_sat\nA,B,10\nB,A,10\n")
        with self.assertRaisesRegex(SnapshotError, "record 2"):
            netmodel.parse_snapshot('[{"src": "A", "dst": "B", "capacity_sat": 10}, {"src": "A"}]')
        with self.assertRaises(SnapshotError):
            netmodel.parse_snapshot("a,b\n1,2\n")

    def test_04_load_and_save(self):
        with self.assertRaises(SnapshotError):
            netmodel.load_snapshot("/nonexistent/snapshot.csv")

        g = netmodel.parse_snapshot(SNAPSHOT_CSV)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "snap.csv")
            netmodel.save_snapshot(g, path)
            again = netmodel.load_snapshot(path)
        self.assertEqual(netmodel.dump_snapshot(again), netmodel.dump_snapshot(g))

    def test_05_synthetic(self):
        a = netmodel.synthetic_graph(seed=7, nodes=300)
        b = netmodel.synthetic_graph(seed=7, nodes=300)
        self.assertEqual(netmodel.dump_snapshot(a), netmodel.dump_snapshot(b))
        self.assertEqual(len(a.nodes), 300)
        self.assertEqual(a.nodes[0], "N00000")

        pendants = sum(1 for u in a.nodes if a.degree(u) == 1)
        self.assertGreaterEqual(pendants, 60)
        self.assertTrue(all(ch.capacity >= netmodel.SYNTHETIC_MIN_CAPACITY for ch in a.channels()))

    def test_06_remote_snapshot(self):
        ok = mock.Mock(status_code=200, text=SNAPSHOT_CSV)
        with mock.patch("griefsim.util.requests.request", return_value=ok) as request:
            g = netmodel.load_snapshot("https://example.org/snap.csv")
        self.assertEqual(g.nodes, ["A", "B", "C"])
        self.assertEqual(request.call_args[0], ("GET", "https://example.org/snap.csv"))

        records = mock.Mock(status_code=200, text='[{"src": "A", "dst": "B", "capacity_sat": 10}]')
        with mock.patch("griefsim.util.requests.request", return_value=records):
            g = netmodel.load_snapshot("http://example.org/snap.json", BalanceMode.unilateral)
        self.assertEqual(g.remain("A", "B"), 10)

    def test_07_remote_snapshot_errors(self):
        missing = mock.Mock(status_code=404, text="")
        with mock.patch("griefsim.util.requests.request", return_value=missing) as request:
            with self.assertRaisesRegex(SnapshotError, "HTTP 404"):
                netmodel.load_snapshot("https://example.org/snap.csv")
        self.assertEqual(request.call_count, 1)

        busy = mock.Mock(status_code=503, text="")
        ok = mock.Mock(status_code=200, text=SNAPSHOT_CSV)
        with mock.patch("griefsim.util.requests.request", side_effect=[busy, ok]) as request:
            g = netmodel.load_snapshot("https://example.org/snap.csv")
        self.assertEqual(request.call_count, 2)
        self.assertEqual(len(g.channels()), 2)

        down = requests.ConnectionError("refused")
        with mock.patch("griefsim.util.requests.request", side_effect=down) as request:
            with self.assertRaisesRegex(SnapshotError, "cannot fetch"):
                netmodel.load_snapshot("https://example.org/snap.csv")
        self.assertEqual(request.call_count, 1 + HTTP_RETRIES)

class TestRouting(unittest.TestCase):

    def test_01_line_route(self):
        econ = EconomicParams()
        g = line_graph(4)
        path = netmodel.find_route(g, node_id(0), node_id(3), 100000, 12, econ)
        self.assertEqual(path.hops, (node_id(0), node_id(1), node_id(2), node_id(3)))
        self.assertEqual(list(path.amounts), hop_amounts(100000, 3, econ))
        self.assertEqual(path.timeouts, (300, 200, 100))

        self.assertIsNone(netmodel.find_route(g, node_id(0), node_id(3), 100000, 2, econ))
        self.assertIsNone(netmodel.find_route(g, node_id(0), node_id(3), 6_000_000, 12, econ))
        self.assertIsNone(netmodel.find_route(g, node_id(0), node_id(0), 1, 12, econ))

    def test_02_shortest_then_smallest_id(self):
        g = diamond_graph()
        path = netmodel.find_route(g, node_id(0), node_id(3), 1000, 12)
        self.assertEqual(path.hops, (node_id(0), node_id(1), node_id(3)))

        excluded = {frozenset((node_id(1), node_id(3)))}
        path = netmodel.find_route(g, node_id(0), node_id(3), 1000, 12, excluded=excluded)
        self.assertEqual(path.hops, (node_id(0), node_id(2), node_id(3)))

    def test_03_route_respects_liquidity(self):
        g = diamond_graph(capacity=200000)
        g.lock(node_id(1), node_id(3), 100000)
        path = netmodel.find_route(g, node_id(0), node_id(3), 50000, 12)
        self.assertEqual(path.hops, (node_id(0), node_id(2), node_id(3)))

    def test_04_attack_cycles(self):
        ring = ring_graph(5)
        path = netmodel.find_attack_cycle(ring, node_id(0), 20, amount=1000)
        self.assertTrue(path.is_cycle)
        self.assertEqual(path.kappa, 5)
        self.assertEqual(path.hops[0], node_id(0))
        self.assertEqual(len(set(path.hops[:-1])), 5)

        self.assertIsNone(netmodel.find_attack_cycle(ring, node_id(0), 4, amount=1000))

        tri = triangle_graph()
        self.assertEqual(netmodel.find_attack_cycle(tri, node_id(1), 20, amount=1000).kappa, 3)

        star = star_graph()
        self.assertIsNone(netmodel.find_attack_cycle(star, node_id(1), 20, amount=1000))
        self.assertIsNone(netmodel.find_attack_cycle(star, node_id(0), 20, amount=1000))

    def test_05_attack_cycle_needs_penalty_liquidity(self):
        tri = triangle_graph(capacity=200000)
        self.assertIsNotNone(netmodel.find_attack_cycle(tri, node_id(0), 3, amount=90000))
        # the first penalty alone, 1e-2 * 90002 * 300, exceeds the 100000 side
        self.assertIsNone(netmodel.find_attack_cycle(tri, node_id(0), 3, amount=90000, gamma=1e-2))

    def test_06_attack_cycle_skips_dead_ends(self):
        # C closes the cycle C-A-X1-X2-B-C; A also leads into dead-end chains
        g = ChannelGraph()
        for a, b in [("C", "A"), ("A", "X1"), ("X1", "X2"), ("X2", "B"), ("B", "C")]:
            g.add_channel(a, b, 1_000_000)
        for i in range(10):
            g.add_channel("A", "D%02d" % i, 1_000_000)
            g.add_channel("D%02d" % i, "E%02d" % i, 1_000_000)
            g.add_channel("E%02d" % i, "F%02d" % i, 1_000_000)

        path = netmodel.find_attack_cycle(g, "C", 5, amount=1000, max_expansions=10)
        self.assertEqual(path.hops, ("C", "A", "X1", "X2", "B", "C"))
        path = netmodel.find_attack_cycle(g, "C", 8, amount=1000)
        self.assertEqual(path.kappa, 5)

        with self.assertLogs("griefsim.netmodel", "WARNING") as logs:
            self.assertIsNone(netmodel.find_attack_cycle(g, "C", 5, amount=1000, max_expansions=1))
        self.assertTrue(any("gave up after 1 expansions" in line for line in logs.output))

if __name__ == '__main__':
    unittest.main()
