import random
import unittest
from dataclasses import replace

from .. import games
from ..common import Nature, Protocol
from ..economics import EconomicParams
from ..games import Action, GameSpec

ECON = EconomicParams(rate=0.004)

def htlc_spec(**kwargs):
    return GameSpec(protocol=Protocol.HTLC, alpha=15000, n=20, q=0.7, economics=ECON, **kwargs)

def gp_spec(**kwargs):
    return GameSpec(protocol=Protocol.HTLC_GP, alpha=15000, n=20, q=0.7, economics=ECON, **kwargs)

class TestGames(unittest.TestCase):

    def test_01_cutoffs(self):
        htlc = games.cutoff_theta(htlc_spec())
        gp = games.cutoff_theta(gp_spec())
        self.assertAlmostEqual(htlc, 0.025, delta=0.01)
        self.assertAlmostEqual(gp, 0.7, delta=0.1)
        self.assertLess(htlc, gp)

    def test_02_cutoff_is_the_root(self):
        for spec in (htlc_spec(), gp_spec(), gp_spec(gamma=1e-4), htlc_spec(remain_fwd=500000)):
            self.assertAlmostEqual(games.cutoff_theta(spec), games.forward_root(spec), delta=1e-12)

    def test_03_expected_payoffs(self):
        spec = htlc_spec()
        cut = games.cutoff_theta(spec)
        self.assertGreater(games.expected_payoff_forward(replace(spec, theta=cut / 2)), 0)
        self.assertLess(games.expected_payoff_forward(replace(spec, theta=min(1.0, cut * 2))), 0)
        self.assertEqual(games.expected_payoff_noforward(spec), 0.0)
        self.assertAlmostEqual(games.expected_payoff_forward(spec), spec.forward_fee)

    def test_04_payoffs(self):
        spec = htlc_spec()

        ###
        # NF ends the game
        ###

        self.assertEqual(games.payoff(spec, Nature.uncorrupt, Action.NF()), (0.0, 0.0))
        with self.assertRaises(ValueError):
            games.payoff(spec, Nature.uncorrupt, Action.NF(), Action.Ac())

        ###
        # Honest acceptance
        ###

        first, second = games.payoff(spec, Nature.uncorrupt, Action.F(), Action.Ac())
        self.assertAlmostEqual(first, spec.forward_fee)
        self.assertAlmostEqual(second, spec.forward_amount)
        self.assertEqual(games.payoff(spec, Nature.uncorrupt, Action.F(), Action.Rt()), (0.0, 0.0))

        ###
        # Corrupt payee
        ###

        first, second = games.payoff(spec, Nature.corrupt, Action.F(), Action.Rt())
        self.assertEqual((first, second), (0.0, -spec.C))
        self.assertAlmostEqual(games.eta(spec, 50), -spec.C - spec.o(50, spec.attack_value))

        with self.assertRaises(ValueError):
            games.payoff(spec, Nature.corrupt, Action.F(), Action.WaitRt(spec.D))
        with self.assertRaises(ValueError):
            games.payoff(spec, Nature.corrupt, Action.F(), Action.WaitAc(0))
        with self.assertRaises(ValueError):
            games.payoff(spec, Nature.corrupt, Action.F())
        with self.assertRaises(ValueError):
            games.payoff(spec, Nature.corrupt, Action.Ac(), Action.Ac())

    def test_05_best_responses(self):
        self.assertEqual(games.best_response(htlc_spec(), Nature.uncorrupt), frozenset([Action.Ac()]))

        # without a penalty griefing ties with cancelling one block before the deadline
        htlc = games.best_response(htlc_spec(), Nature.corrupt)
        self.assertIn(Action.Gr(), htlc)
        self.assertIn(Action.WaitRt(99), htlc)

        gp = games.best_response(gp_spec(gamma=1e-4), Nature.corrupt)
        self.assertEqual(gp, frozenset([Action.WaitRt(99)]))

    def test_06_penalty_changes_hands_on_grief(self):
        spec = gp_spec(gamma=1e-4, hop=5, kappa=10)
        z = spec.penalty
        self.assertGreater(z, 0)
        first, second = games.payoff(spec, Nature.uncorrupt, Action.F(), Action.Gr())
        plain = games.payoff(replace(spec, gamma=0.0), Nature.uncorrupt, Action.F(), Action.Gr())
        self.assertAlmostEqual(first - plain.first, z)
        self.assertLess(second, plain.second)

    def test_07_sweep_rows(self):
        spec = htlc_spec()
        rows = games.sweep_rows(spec, [0.0, 0.01, 0.02, 0.03, 0.5])
        self.assertEqual([r["decision"] for r in rows], ["F", "F", "F", "NF", "NF"])
        for r in rows[3:]:
            self.assertEqual((r["E_first"], r["E_second_uncorrupt"], r["E_second_corrupt"]), (0.0, 0.0, 0.0))
        self.assertGreater(rows[0]["E_second_uncorrupt"], 0)
        self.assertEqual(rows[0]["protocol"], "htlc")

    def test_08_spec_validation(self):
        with self.assertRaises(ValueError):
            htlc_spec(theta=1.5)
        with self.assertRaises(ValueError):
            GameSpec(protocol=Protocol.HTLC_GP_ZETA)
        with self.assertRaises(ValueError):
            htlc_spec(kappa=21)
        self.assertEqual(htlc_spec().hop, 20)

    def test_09_no_waiting_without_a_cost_of_waiting(self):
        still = EconomicParams(rate=0.0)
        for spec in (replace(htlc_spec(), economics=still), replace(gp_spec(gamma=1e-4), economics=still)):
            self.assertEqual(games.best_response(spec, Nature.uncorrupt), frozenset([Action.Ac()]))
            ac = games.payoff(spec, Nature.uncorrupt, Action.F(), Action.Ac()).second
            wait = games.payoff(spec, Nature.uncorrupt, Action.F(), Action.WaitAc(1)).second
            self.assertEqual(ac, wait)

    def test_10_sampled_cutoffs(self):
        rng = random.Random(7)
        for _ in range(200):
            economics = EconomicParams(rate=rng.uniform(0.0, 0.01))
            common = dict(alpha=rng.randint(10000, 100000), n=rng.randint(3, 20), q=rng.uniform(0.0, 1.0),
                          economics=economics, remain_fwd=rng.randint(0, 1_000_000),
                          remain_bwd=rng.randint(0, 1_000_000))
            htlc = GameSpec(protocol=Protocol.HTLC, **common)
            gp = GameSpec(protocol=Protocol.HTLC_GP, gamma=10 ** rng.uniform(-7, -3), **common)
            self.assertGreaterEqual(games.cutoff_theta(gp), games.cutoff_theta(htlc), msg=str(common))

            for spec in (htlc, gp):
                cut = games.cutoff_theta(spec)
                for theta in (rng.random(), cut / 2, (1 + cut) / 2):
                    ef = games.expected_payoff_forward(replace(spec, theta=theta))
                    if theta < cut - 1e-6:
                        self.assertGreater(ef, 0, msg=str(common))
                    elif theta > cut + 1e-6:
                        self.assertLess(ef, 0, msg=str(common))

if __name__ == '__main__':
    unittest.main()
