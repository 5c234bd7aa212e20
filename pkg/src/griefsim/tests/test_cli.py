import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout

from .. import cli
from ..penalty import penalty_rate

TRIANGLE = "src,dst,capacity_sat\nA,B,2000000\nB,C,2000000\nC,A,2000000\n"
LINE = "src,dst,capacity_sat\nA,B,1000000\nB,C,1000000\n"

def run(*argv):
    out = io.StringIO()
    with redirect_stdout(out):
        status = cli.dispatch(list(argv))
    return status, out.getvalue()

def run_json(*argv):
    status, text = run("-o", "json", *argv)
    return status, json.loads(text) if status == cli.EXIT_OK else text

class TestCLI(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w") as fp:
            fp.write(text)
        return path

    def test_01_penalty_calc(self):
        status, rows = run_json("penalty-calc", "--k", "0.25", "--zeta", "0.025")
        self.assertEqual(status, cli.EXIT_OK)
        row = rows[0]
        self.assertEqual(row["n_max"], 10)
        self.assertAlmostEqual(row["gamma"], penalty_rate(0.25, 0.025))
        self.assertGreater(row["k_max"], 0)

        status, rows = run_json("penalty-calc", "--h", "1")
        self.assertIsNone(rows[0]["k_max"])

        status, _ = run_json("penalty-calc", "--zeta", "0")
        self.assertEqual(status, cli.EXIT_CONFIG)

    def test_02_claims_check_without_penalty(self):
        status, rows = run_json("claims-check", "--gamma", "0", "--kzeta", "")
        self.assertEqual(status, cli.EXIT_OK)
        self.assertEqual(len(rows), 19)
        self.assertTrue(all(r["loss_pct"] == 0.0 for r in rows))

    def test_03_table2_outdir(self):
        outdir = os.path.join(self.tmp.name, "out")
        status, rows = run_json("--outdir", outdir, "table2")
        self.assertEqual(status, cli.EXIT_OK)
        self.assertEqual(len(rows), 27)
        for name in ("table2.csv", "table2.json", "table2.config"):
            self.assertTrue(os.path.isfile(os.path.join(outdir, name)))
        with open(os.path.join(outdir, "table2.config")) as fp:
            self.assertIn("D=100\n", fp.read())

        with open(os.path.join(outdir, "table2.csv"), "rb") as fp:
            first = fp.read()
        run("--outdir", outdir, "table2")
        with open(os.path.join(outdir, "table2.csv"), "rb") as fp:
            self.assertEqual(fp.read(), first)

    def test_04_precedence(self):
        path = self.write("run.config", "# timing\nD=50\n\n")
        _, rows = run_json("-c", path, "penalty-calc")
        self.assertAlmostEqual(rows[0]["gamma"], penalty_rate(0.25, 0.025, 50, 100))
        _, rows = run_json("-c", path, "--set", "D=80", "penalty-calc")
        self.assertAlmostEqual(rows[0]["gamma"], penalty_rate(0.25, 0.025, 80, 100))
        _, rows = run_json("-c", path, "--set", "D=80", "penalty-calc", "--D", "200")
        self.assertAlmostEqual(rows[0]["gamma"], penalty_rate(0.25, 0.025, 200, 100))

        # keys another subcommand uses are ignored
        status, _ = run_json("--set", "seed=4", "penalty-calc")
        self.assertEqual(status, cli.EXIT_OK)

    def test_05_config_errors(self):
        status, text = run("--set", "bogus=1", "table2")
        self.assertEqual(status, cli.EXIT_CONFIG)
        self.assertIn("Error: unknown key 'bogus'", text)

        status, text = run("-c", self.write("bad.config", "D=100\nnot a pair\n"), "table2")
        self.assertEqual(status, cli.EXIT_CONFIG)
        self.assertIn("bad.config:2", text)

        self.assertEqual(run("-c", os.path.join(self.tmp.name, "missing.config"), "table2")[0], cli.EXIT_CONFIG)
        self.assertEqual(run("penalty-calc", "--D", "many")[0], cli.EXIT_CONFIG)

    def test_06_seed_and_snapshot(self):
        status, text = run("capacity")
        self.assertEqual(status, cli.EXIT_CONFIG)
        self.assertIn("'seed' is required", text)

        missing = os.path.join(self.tmp.name, "nope.csv")
        status, text = run("capacity", "--seed", "1", "--snapshot", missing)
        self.assertEqual(status, cli.EXIT_CONFIG)
        self.assertIn("snapshot not found", text)

        status, _ = run("snapshot-info", "--snapshot", self.write("broken.csv", "a,b\n1,2\n"))
        self.assertEqual(status, cli.EXIT_CONFIG)

    def test_07_no_command(self):
        status, text = run()
        self.assertEqual(status, cli.EXIT_ERROR)
        self.assertIn("Command not specifed.", text)

    def test_08_snapshot_info_and_route(self):
        path = self.write("line.csv", LINE)
        status, rows = run_json("snapshot-info", "--snapshot", path)
        self.assertEqual(status, cli.EXIT_OK)
        self.assertEqual((rows[0]["nodes"], rows[0]["channels"], rows[0]["pendant_nodes"]), (3, 2, 2))

        status, rows = run_json("route", "--snapshot", path, "--src", "A", "--dst", "C", "--amount", "1000")
        self.assertEqual(status, cli.EXIT_OK)
        self.assertEqual([(r["from"], r["to"], r["amount"], r["timeout"]) for r in rows],
                         [("A", "B", 1001, 200), ("B", "C", 1000, 100)])

        status, _ = run_json("route", "--snapshot", path, "--src", "A", "--dst", "C", "--amount", "900000")
        self.assertEqual(status, cli.EXIT_INFEASIBLE)
        self.assertEqual(run_json("route", "--snapshot", path, "--src", "A")[0], cli.EXIT_CONFIG)

    def test_09_attack_trace(self):
        path = self.write("triangle.csv", TRIANGLE)
        outdir = os.path.join(self.tmp.name, "trace")
        status, rows = run_json("--outdir", outdir, "attack-trace", "--snapshot", path, "--seed", "1",
                                "--protocol", "htlc", "--n", "3")
        self.assertEqual(status, cli.EXIT_OK)
        row = rows[0]
        self.assertEqual((row["corrupt"], row["kappa"], row["channels_closed"]), ("A", 3, 3))
        self.assertEqual(row["protocol"], "htlc")

        with open(os.path.join(outdir, "attack-trace.jsonl")) as fp:
            events = [json.loads(line) for line in fp]
        self.assertEqual(len([e for e in events if e["kind"] == "close"]), 3)
        self.assertEqual(events[0]["kind"], "lock")

        status, _ = run_json("attack-trace", "--snapshot", path, "--seed", "1", "--corrupt", "Z")
        self.assertEqual(status, cli.EXIT_CONFIG)
        pair = self.write("pair.csv", "src,dst,capacity_sat\nA,B,1000000\n")
        status, _ = run_json("attack-trace", "--snapshot", pair, "--seed", "1", "--n", "3")
        self.assertEqual(status, cli.EXIT_INFEASIBLE)

if __name__ == '__main__':
    unittest.main()
