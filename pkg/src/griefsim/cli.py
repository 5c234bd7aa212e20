import argparse
import json
import logging
import os
import random
import statistics

import networkx as nx

from .attacker import AttackerConfig, corrupt_candidates, execute_attack, plan_attack
from .common import ConfigError, GriefsimError, InfeasibleExperiment, Protocol, SnapshotError, UnboundedError
from .config import ALL, SCHEMA, SEEDED, RunConfig, keys_for
from .economics import channel_time_left
from .experiments import (claims_check, load_graph, run_capacity_experiment, run_game_sweep, run_scalability,
                          run_success_rate, table2_grid, write_csv, write_json)
from .games import GameSpec
from .netmodel import find_route
from .penalty import (PenaltyParams, max_path_length, max_penalty_ratio, penalty_rate,
                      penalty_rate_summation)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

HELP = {
    "snapshot-info": "Summarise a channel-graph snapshot.",
    "route": "Find the shortest feasible route between two nodes.",
    "game-sweep": "Sweep beliefs through the HTLC and HTLC-GP forwarding games.",
    "penalty-calc": "Penalty rate, path-length cap and k_max for given k, zeta and h.",
    "claims-check": "Loss-percent closed forms against direct accounting.",
    "table2": "Penalty rate and path-length cap over the (k, zeta) reference grid.",
    "capacity": "Victim capacity locked by a budgeted attacker per protocol setting.",
    "success-rate": "HTLC-GP/HTLC completion ratio of a random workload.",
    "scalability": "Wall time and completions of routed workloads in altruistic and rational mode.",
    "attack-trace": "Run one attack instance and dump its ledger events.",
}

def build_parser():
    args_main = argparse.ArgumentParser(prog="griefsim")
    args_main.add_argument("-d", "--debug", action="store_true", help="enable debug logging")
    args_main.add_argument("-o", "--output", type=str, help="output format", choices=["table", "json"], default="table")
    args_main.add_argument("-c", "--config", type=str, help="key=value config file")
    args_main.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    args_main.add_argument("--outdir", type=str, help="directory for the csv, json and config files")
    args_main.add_argument("--jobs", type=str, help="worker processes for sweeps")

    cmds_main = args_main.add_subparsers(help="command", dest="command")
    for name in ALL:
        sub = cmds_main.add_parser(name, help=HELP[name])
        for key in keys_for(name):
            _, default, text, _ = SCHEMA[key]
            shown = default.value if hasattr(default, "value") else default
            sub.add_argument("--" + key, dest="key_" + key, type=str, default=None,
                             help=text + " (default: " + str(shown) + ")")
    return args_main, cmds_main

def exiterror(s, parser, status=EXIT_ERROR):
    parser.print_help()
    print("\nError: " + s)
    return status

###
# Subcommands: each returns (csv rows, printed rows, json summary)
###

def cmd_snapshot_info(cfg):
    graph = load_graph(cfg.experiment())
    capacities = [ch.capacity for ch in graph.channels()]
    degrees = [graph.degree(u) for u in graph.nodes]
    row = {
        "nodes": len(degrees),
        "channels": len(capacities),
        "total_capacity": sum(capacities),
        "median_capacity": statistics.median(capacities) if capacities else 0,
        "pendant_nodes": sum(1 for d in degrees if d == 1),
        "degree_two_nodes": sum(1 for d in degrees if d == 2),
        "max_degree": max(degrees) if degrees else 0,
        "components": nx.number_connected_components(graph.open_view()) if degrees else 0,
    }
    return [row], [row], row

def cmd_route(cfg):
    economics = cfg.economics()
    graph = load_graph(cfg.experiment())
    src, dst = cfg.require("src"), cfg.require("dst")
    path = find_route(graph, src, dst, cfg["amount"], cfg["max_len"], economics, cfg["D"], cfg["delta"])
    if path is None:
        raise InfeasibleExperiment("no route from " + src + " to " + dst + " for " + str(cfg["amount"]) + " sat")
    rows = [{"hop": i, "from": path.hops[i], "to": path.hops[i + 1], "amount": path.amounts[i],
             "timeout": path.timeouts[i]} for i in range(path.kappa)]
    return rows, rows, {"kappa": path.kappa, "hops": list(path.hops)}

def cmd_game_sweep(cfg):
    try:
        base = GameSpec(alpha=cfg["amount"], n=cfg["n"], kappa=cfg["kappa"], D=cfg["D"], delta=cfg["delta"],
                        theta=cfg["theta"], q=cfg["q"], economics=cfg.economics(), remain_fwd=cfg["remain_fwd"],
                        remain_bwd=cfg["remain_bwd"], lifetime=cfg["lifetime"], channel_age=cfg["channel_age"],
                        C=cfg["C"], gamma=cfg["gamma"] or 0.0)
    except ValueError as e:
        raise ConfigError(str(e))
    rows, flips = run_game_sweep(base, cfg["amounts"], cfg["rates"], cfg["theta_step"])
    return rows, flips, {"flips": flips, "points": len(rows)}

def cmd_penalty_calc(cfg):
    economics = cfg.economics()
    k, zeta, D, delta = cfg["k"], cfg["zeta"], cfg["D"], cfg["delta"]
    try:
        n_max = max_path_length(k, zeta)
        row = {"k": k, "zeta": zeta, "gamma": penalty_rate(k, zeta, D, delta), "n_max": n_max,
               "gamma_summation": penalty_rate_summation(k, n_max, D, delta), "h": cfg["h"]}
    except (ValueError, UnboundedError) as e:
        raise ConfigError(str(e))
    try:
        row["k_max"] = max_penalty_ratio(cfg["h"], cfg["amount"], economics, D, cfg["remain"],
                                         channel_time_left(cfg["lifetime"], D))
    except UnboundedError:
        row["k_max"] = None
    return [row], [row], row

def cmd_claims_check(cfg):
    gammas = (cfg["gamma"],) if cfg["gamma"] is not None else cfg["gammas"]
    try:
        rows = claims_check(gammas, range(2, cfg["n"] + 1), cfg["kzeta"], cfg["D"], cfg["delta"])
    except ValueError as e:
        raise ConfigError(str(e))
    worst = max((r["rel_error"] for r in rows), default=0.0)
    return rows, rows, {"rows": len(rows), "max_rel_error": worst}

def cmd_table2(cfg):
    rows = table2_grid(cfg["D"], cfg["delta"])
    return rows, rows, {"rows": rows}

def cmd_capacity(cfg):
    rows = [r.to_row() for r in run_capacity_experiment(cfg.experiment())]
    return rows, rows, {"rows": rows}

def cmd_success_rate(cfg):
    rows = run_success_rate(cfg.experiment())
    return rows, rows, {"rows": rows}

def cmd_scalability(cfg):
    rows = run_scalability(cfg.experiment())
    return rows, rows, {"rows": rows}

def _attack_penalty(cfg):
    protocol = cfg["protocol"]
    if protocol is Protocol.HTLC:
        return PenaltyParams.plain(0.0)
    if protocol is Protocol.HTLC_GP and cfg["gamma"] is not None:
        return PenaltyParams.plain(cfg["gamma"])
    guaranteed = PenaltyParams.for_guarantee(cfg["k"], cfg["zeta"], cfg["D"], cfg["delta"])
    if protocol is Protocol.HTLC_GP:
        return PenaltyParams.plain(guaranteed.gamma)
    return guaranteed

def cmd_attack_trace(cfg, outdir=None):
    seed = cfg["seed"]
    experiment = cfg.experiment()
    graph = load_graph(experiment)
    try:
        attacker = AttackerConfig(protocol=cfg["protocol"], alpha=cfg["amount"], n=cfg["n"], C=cfg["C"],
                                  penalty=_attack_penalty(cfg), strategy=cfg["strategy"], D=cfg["D"],
                                  delta=cfg["delta"], economics=cfg.economics(), max_expansions=cfg["max_expansions"])
    except ValueError as e:
        raise ConfigError(str(e))

    candidates = [cfg["corrupt"]] if cfg["corrupt"] else corrupt_candidates(graph)
    instance = None
    for corrupt in candidates:
        if not graph.has_node(corrupt):
            raise ConfigError("corrupt node " + corrupt + " is not in the graph")
        instance = plan_attack(graph, corrupt, attacker)
        if instance:
            break
    if instance is None:
        raise InfeasibleExperiment("no feasible attack instance")

    outcome = execute_attack(graph, instance, attacker, random.Random(seed))
    row = outcome.to_dict()
    row["protocol"] = attacker.protocol.value
    row["gamma"] = attacker.penalty.gamma
    if outdir:
        with open(os.path.join(outdir, "attack-trace.jsonl"), "w") as fp:
            for event in outcome.events:
                fp.write(event.to_json() + "\n")
    return [row], [row], dict(row, hops=list(instance.cycle.hops), events=len(outcome.events))

COMMANDS = {
    "snapshot-info": cmd_snapshot_info,
    "route": cmd_route,
    "game-sweep": cmd_game_sweep,
    "penalty-calc": cmd_penalty_calc,
    "claims-check": cmd_claims_check,
    "table2": cmd_table2,
    "capacity": cmd_capacity,
    "success-rate": cmd_success_rate,
    "scalability": cmd_scalability,
    "attack-trace": cmd_attack_trace,
}

def print_output(rows, output):
    if output == "table":
        try:
            import tabulate
        except ImportError:
            logger.warning("Cannot use tabular output because missing \"tabulate\" package")
            output = "json"

    if output == "table":
        print(tabulate.tabulate(rows, headers="keys", tablefmt="pretty"))
    if output == "json":
        print(json.dumps(rows, indent=2, default=str))

def dispatch(argv, handler=None):
    args_main, _ = build_parser()
    args = args_main.parse_args(argv)

    if args.debug and handler is not None:
        handler.setLevel(logging.DEBUG)

    if not args.command:
        return exiterror("Command not specifed.", args_main)

    flags = {key[4:]: value for key, value in vars(args).items() if key.startswith("key_")}
    if args.jobs is not None and "jobs" in keys_for(args.command) and flags.get("jobs") is None:
        flags["jobs"] = args.jobs

    try:
        cfg = RunConfig(args.command, args.config, args.set, flags)
        if args.command in SEEDED:
            cfg.require("seed")
        if args.outdir:
            os.makedirs(args.outdir, exist_ok=True)
        if args.command == "attack-trace":
            rows, printed, summary = cmd_attack_trace(cfg, args.outdir)
        else:
            rows, printed, summary = COMMANDS[args.command](cfg)
    except (ConfigError, SnapshotError, ValueError) as e:
        return exiterror(str(e), args_main, EXIT_CONFIG)
    except InfeasibleExperiment as e:
        return exiterror(str(e), args_main, EXIT_INFEASIBLE)
    except GriefsimError as e:
        return exiterror(str(e), args_main, EXIT_ERROR)

    if args.outdir:
        write_csv(os.path.join(args.outdir, args.command + ".csv"), rows)
        write_json(os.path.join(args.outdir, args.command + ".json"), summary)
        cfg.save(args.outdir)

    print_output(printed, args.output)
    return EXIT_OK
