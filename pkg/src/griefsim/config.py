import logging
import os

from .common import BalanceMode, ConfigError, Protocol, Strategy
from .economics import EconomicParams
from .experiments import ExperimentConfig
from .netmodel import DEFAULT_LIFETIME, DEFAULT_MAX_EXPANSIONS, SYNTHETIC_NODES

logger = logging.getLogger(__name__)

###
# Value parsers
###

def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())

def _ints(s):
    return tuple(int(float(x)) for x in s.split(",") if x.strip())

def _pairs(s):
    pairs = []
    for item in s.split(","):
        if not item.strip():
            continue
        a, b = item.split(":")
        pairs.append((float(a), float(b)))
    return tuple(pairs)

def _optional_float(s):
    return None if s.lower() in ("", "none") else float(s)

def _optional_int(s):
    return None if s.lower() in ("", "none") else int(s)

def _optional_str(s):
    return None if s.lower() in ("", "none") else s

def _format(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(":".join(repr(v) for v in x) if isinstance(x, tuple) else repr(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)

ECONOMICS = ("base_fee", "fee_rate", "per_tx_val", "mining_fee", "rate")
TIMING = ("D", "delta")
GRAPH = ("snapshot", "balance_mode", "nodes")
EXPERIMENT = ("capacity", "success-rate", "scalability")
SEEDED = ("capacity", "success-rate", "scalability", "attack-trace", "game-sweep")

ALL = ("snapshot-info", "route", "game-sweep", "penalty-calc", "claims-check", "table2", "capacity",
       "success-rate", "scalability", "attack-trace")

# name: (parser, default, help, subcommands)
SCHEMA = {
    "base_fee":       (float, 1.0, "base fee per forwarded payment (sat)", ALL),
    "fee_rate":       (float, 1e-6, "proportional fee rate", ALL),
    "per_tx_val":     (float, 1000.0, "value of one unit transaction (sat)", ALL),
    "mining_fee":     (int, 154, "on-chain fee M paid on channel closure (sat)", ALL),
    "rate":           (float, 0.0003, "arrival rate of unit transactions per block", ALL),
    "D":              (int, 100, "payee deadline in blocks", ALL),
    "delta":          (int, 100, "per-hop timeout increment in blocks", ALL),
    "lifetime":       (int, DEFAULT_LIFETIME, "channel lifetime T in blocks", ("game-sweep", "penalty-calc")),
    "amount":         (int, 15000, "payment amount alpha (sat)", ("game-sweep", "penalty-calc", "route", "attack-trace")),
    "n":              (int, 20, "maximum path length", ("game-sweep", "claims-check", "capacity", "attack-trace")),
    "kappa":          (_optional_int, None, "length of the honest payment, default n", ("game-sweep",)),
    "q":              (float, 0.7, "probability the corrupt payee cancels before the deadline", ("game-sweep", "scalability")),
    "theta":          (float, 0.0, "belief that the counterparty is corrupt", ("game-sweep",)),
    "C":              (int, 250000, "attacker cost per instance (sat)", ("game-sweep", "capacity", "attack-trace")),
    "gamma":          (_optional_float, None, "single penalty rate, overrides gammas", ("game-sweep", "claims-check", "attack-trace")),
    "remain_fwd":     (int, 0, "forwarder's residual balance on the game channel", ("game-sweep",)),
    "remain_bwd":     (int, 0, "second mover's residual balance on the game channel", ("game-sweep",)),
    "channel_age":    (int, 0, "blocks between channel opening and contract formation", ("game-sweep",)),
    "amounts":        (_ints, (15000,), "payment amounts of the sweep", ("game-sweep",)),
    "rates":          (_floats, (0.002, 0.004, 0.008), "arrival rates of the sweep", ("game-sweep",)),
    "theta_step":     (float, 0.005, "belief grid step", ("game-sweep",)),
    "k":              (float, 0.25, "maximum penalty as a share of alpha", ("penalty-calc", "attack-trace")),
    "zeta":           (float, 0.025, "guaranteed minimum compensation share", ("penalty-calc", "attack-trace")),
    "h":              (float, 0.9, "probability the payee stays live", ("penalty-calc",)),
    "remain":         (int, 0, "payee's residual balance for k_max", ("penalty-calc",)),
    "snapshot":       (str, "synthetic", "snapshot path, http(s) URL or 'synthetic'",
                       ("snapshot-info", "route", "capacity", "success-rate", "scalability", "attack-trace")),
    "balance_mode":   (BalanceMode, BalanceMode.split, "how channel capacity is split between endpoints",
                       ("snapshot-info", "route", "capacity", "success-rate", "scalability", "attack-trace")),
    "nodes":          (int, SYNTHETIC_NODES, "node count of the synthetic graph",
                       ("snapshot-info", "route", "capacity", "success-rate", "scalability", "attack-trace")),
    "protocols":      (lambda s: tuple(Protocol(x.strip()) for x in s.split(",") if x.strip()),
                       (Protocol.HTLC, Protocol.HTLC_GP, Protocol.HTLC_GP_ZETA), "protocols to run", EXPERIMENT),
    "protocol":       (Protocol, Protocol.HTLC_GP, "protocol of a single attack", ("attack-trace",)),
    "gammas":         (_floats, (1e-7, 1e-6, 1e-5, 1e-4, 1e-3), "penalty-rate sweep",
                       ("claims-check", "capacity", "success-rate")),
    "kzeta":          (_pairs, ((0.25, 0.025),), "k:zeta pairs", ("claims-check", "capacity", "scalability")),
    "budgets":        (_ints, (100_000_000,), "attacker budgets (sat)", ("capacity",)),
    "alphas":         (_ints, (50000,), "attack payment values (sat)", ("capacity",)),
    "workload":       (int, 3000, "transactions in the success-rate workload", ("success-rate",)),
    "workloads":      (_ints, (100, 1000, 5000), "request counts of the scalability study", ("scalability",)),
    "min_len":        (int, 5, "shortest random walk", ("success-rate",)),
    "max_len":        (int, 20, "longest random walk or route", ("success-rate", "route")),
    "thetas":         (_floats, (0.05, 0.5), "beliefs of the rational-mode runs", ("scalability",)),
    "seed":           (_optional_int, None, "seed of every random draw", SEEDED),
    "jobs":           (int, 1, "worker processes for sweeps", ("capacity", "success-rate")),
    "max_expansions": (int, DEFAULT_MAX_EXPANSIONS, "cycle search budget per length", ("capacity", "attack-trace")),
    "src":            (_optional_str, None, "payer node id", ("route",)),
    "dst":            (_optional_str, None, "payee node id", ("route",)),
    "corrupt":        (_optional_str, None, "corrupt node id, default the first affordable one", ("attack-trace",)),
    "strategy":       (Strategy, Strategy.grief, "corrupt payee's strategy", ("capacity", "attack-trace")),
}

def keys_for(subcommand):
    return sorted(name for name, spec in SCHEMA.items() if subcommand in spec[3])

class RunConfig:
    """Resolved settings of one subcommand run.

    Values come from the schema defaults, then a key=value file, then
    --set overrides, then per-key flags.
    """

    def __init__(self, subcommand, path=None, overrides=(), flags=None):
        if subcommand not in ALL:
            raise ConfigError("unknown subcommand " + str(subcommand))
        self.subcommand = subcommand
        self.path = path
        self.values = {name: SCHEMA[name][1] for name in keys_for(subcommand)}

        if path:
            self.load(path)
        for item in overrides:
            if "=" not in item:
                raise ConfigError("override must look like key=value: " + item)
            key, raw = item.split("=", 1)
            self.set(key.strip(), raw.strip(), "--set")
        for key, raw in (flags or {}).items():
            if raw is not None:
                self.set(key, raw, "--" + key)

    def set(self, key, raw, source):
        if key not in SCHEMA:
            raise ConfigError("unknown key '" + key + "' in " + source)
        if key not in self.values:
            logger.debug("key " + key + " from " + source + " is not used by " + self.subcommand)
            return
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError("bad value for '" + key + "' in " + source + ": " + str(raw) + " (" + str(e) + ")")

    def load(self, path):
        if not os.path.isfile(path):
            raise ConfigError("config file " + path + " does not exist")
        with open(path, "r") as fp:
            for number, line in enumerate(fp, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(path + ":" + str(number) + ": expected key=value")
                key, raw = line.split("=", 1)
                self.set(key.strip(), raw.strip(), path + ":" + str(number))

    def save(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        target = os.path.join(outdir, self.subcommand + ".config")
        with open(target, "w") as fp:
            for key in sorted(self.values):
                fp.write(key + "=" + _format(self.values[key]) + "\n")
        return target

    def __getitem__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError("key '" + key + "' is not available to " + self.subcommand)

    def require(self, key):
        value = self[key]
        if value is None:
            raise ConfigError("'" + key + "' is required by " + self.subcommand)
        return value

    def economics(self):
        try:
            return EconomicParams(**{name: self.values[name] for name in ECONOMICS})
        except ValueError as e:
            raise ConfigError(str(e))

    def experiment(self):
        """ExperimentConfig from whichever experiment keys this subcommand uses."""
        fields = {}
        for name in ("snapshot", "balance_mode", "nodes", "protocols", "gammas", "kzeta", "budgets", "alphas", "n",
                     "D", "delta", "C", "strategy", "workload", "workloads", "min_len", "max_len", "thetas", "q",
                     "seed", "jobs", "max_expansions"):
            if name in self.values:
                fields[name] = self.values[name]
        try:
            return ExperimentConfig(economics=self.economics(), **fields)
        except ValueError as e:
            raise ConfigError(str(e))
