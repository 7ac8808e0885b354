"""Command-line benchmarks: one subcommand per experiment family, plus ``repro``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, biqae, mitigation, mtda, pomdp, qaoa, solvers, tracking
from .belief_quantum import (
    QuantumBeliefProvider,
    amplified_posterior,
    build_direct_circuit,
    grover_setup_for,
    optimal_iterations,
)
from .sim import Circuit, NoiseModel, run_noisy

TABLE3_SIZES = ((2, 3), (3, 5), (5, 8), (8, 12), (10, 15), (15, 23), (20, 30))


class ConfigError(ValueError):
    """Invalid command configuration (exit code 2)."""


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list]
    config: dict
    metadata: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# version: {__version__}\n")
        buf.write(f"# config: {json.dumps(self.config, sort_keys=True, default=str)}\n")
        buf.write(f"# config_hash: {self.config_hash}\n")
        for k, v in sorted(self.metadata.items()):
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows([[_fmt(v) for v in r] for r in self.rows])
        return buf.getvalue()

    def to_json(self) -> str:
        meta = {"version": __version__, "config_hash": self.config_hash, **self.metadata}
        body = {"metadata": meta, "config": self.config, "columns": self.columns,
                "rows": [[_plain(v) for v in r] for r in self.rows]}
        return json.dumps(body, indent=2, default=str) + "\n"

    def render(self, fmt: str) -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def _fmt(v):
    v = _plain(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _vec(v) -> str:
    return ";".join(repr(float(x)) for x in v)


def replica_seed(master: int, index: int) -> int:
    """Counter-based stream split: the seed of replica ``index`` does not depend on the others."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def _int_list(text, name) -> list[int]:
    if isinstance(text, list):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{name} must be a comma-separated list of integers") from exc


def _float_list(text, name) -> list[float]:
    if isinstance(text, list):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from exc


def _noise(cfg) -> NoiseModel:
    try:
        return NoiseModel(p2q=cfg["noise_p2q"], p1q=cfg.get("noise_p1q", 0.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# Commands --------------------------------------------------------------------------------


def cmd_tiger(cfg: dict) -> ResultTable:
    model = pomdp.tiger2()
    obs = _int_list(cfg["obs"], "obs")
    if any(o not in (0, 1) for o in obs):
        raise ConfigError("observations must be 0 (hear-left) or 1 (hear-right)")
    noise = _noise(cfg)
    shots = cfg["shots"]
    provider = QuantumBeliefProvider(
        shots=shots if (shots and not noise.is_noiseless) else None, noise=noise,
        rng=np.random.default_rng(replica_seed(cfg["seed"], 0)))
    bcfg = biqae.BiqaeConfig(max_iterations=cfg["biqae_iterations"], shots=cfg["biqae_shots"])
    est_rng = np.random.default_rng(replica_seed(cfg["seed"], 1))

    def readout(m, b, a, o):
        post, ev = provider(m, b, a, o)
        if cfg["evidence"] == "biqae" and 0 < ev < 1:
            ev = biqae.estimate(grover_setup_for(build_direct_circuit(m, b, a), o), bcfg,
                                noise, est_rng).a_hat
        return post, ev

    plan = pomdp.PlannerConfig(horizon=cfg["horizon"], seed=cfg["seed"])
    records = pomdp.run_closed_loop(model, obs, plan, readout)
    rows = [[r.t, _vec(r.prior), model.actions[r.action], r.obs, _vec(r.posterior),
             r.evidence, r.hellinger] for r in records]
    return ResultTable(["t", "prior", "action", "obs", "posterior", "evidence", "hellinger"],
                       rows, cfg)


def cmd_grover(cfg: dict) -> ResultTable:
    prior = np.array(_float_list(cfg["prior"], "prior"))
    o = int(cfg["target_obs"])
    try:
        pomdp.check_belief(prior)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = {2: pomdp.tiger2, 4: pomdp.tiger4}.get(len(prior))
    if model is None:
        raise ConfigError("prior must have 2 or 4 entries")
    model = model()
    exact, pe = pomdp.belief_update(model, prior, 0, o)
    setup = grover_setup_for(build_direct_circuit(model, prior, 0), o)
    noise = _noise(cfg)
    rows = []
    for k in range(cfg["kmax"] + 1):
        post, p_amp = amplified_posterior(prior, o, k, model)
        theory = math.sin((2 * k + 1) * math.asin(math.sqrt(pe))) ** 2
        row = [k, p_amp, theory, p_amp / pe, pomdp.hellinger(post, exact)]
        if not noise.is_noiseless:
            counts = run_noisy(setup.amplified_circuit(k), noise, cfg["shots"],
                               np.random.default_rng(replica_seed(cfg["seed"], k)))
            q = setup.marked_qubits[0]
            hits = sum(c for b, c in counts.items() if int(b, 2) >> q & 1 == o)
            row.append(hits / cfg["shots"])
        rows.append(row)
    cols = ["k", "p_marked", "p_theory", "factor", "hellinger"]
    if not noise.is_noiseless:
        cols.append("p_marked_noisy")
    meta = {"evidence": repr(pe), "k_star": optimal_iterations(pe),
            "k_star_sqrt": optimal_iterations(pe, "sqrt")}
    return ResultTable(cols, rows, cfg, meta)


def cmd_biqae(cfg: dict) -> ResultTable:
    amps = _float_list(cfg["amplitudes"], "amplitudes")
    if any(not 0 < a < 1 for a in amps):
        raise ConfigError("amplitudes must lie strictly between 0 and 1")
    try:
        bcfg = biqae.BiqaeConfig(max_iterations=cfg["iterations"], shots=cfg["shots"],
                                 prior=cfg["prior"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seeds = [replica_seed(cfg["seed"], i) for i in range(cfg["runs"])]
    rows = biqae.sweep(amps, seeds, bcfg, _noise(cfg))
    return ResultTable(list(biqae.SWEEP_COLUMNS),
                       [[r[c] for c in biqae.SWEEP_COLUMNS] for r in rows], cfg)


def cmd_qaoa(cfg: dict) -> ResultTable:
    ks, ps = _int_list(cfg["ks"], "ks"), _int_list(cfg["ps"], "ps")
    if not ks or not ps or min(ks) < 1 or min(ps) < 1:
        raise ConfigError("ks and ps must be positive integers")
    n_var = mtda.nominal_n_var(cfg["tracks"], cfg["meas"])
    if n_var > 16:
        raise ConfigError(f"instance has {n_var} variables; statevector sweeps allow 16")
    q, _ = qaoa.random_instance(cfg["tracks"], cfg["meas"],
                                np.random.default_rng(replica_seed(cfg["seed"], 0)))
    seeds = [replica_seed(cfg["seed"], i + 1) for i in range(cfg["runs"])]
    ocfg = qaoa.OptimizerConfig(maxiter=cfg["maxiter"], shots=cfg["shots"])
    rows = qaoa.fpc_sensitivity_sweep(q, ks, ps, seeds, cfg["basis"], ocfg)
    return ResultTable(list(qaoa.SWEEP_COLUMNS),
                       [[r[c] for c in qaoa.SWEEP_COLUMNS] for r in rows], cfg)


def cmd_mtda(cfg: dict) -> ResultTable:
    sizes = cfg["sizes"]
    if isinstance(sizes, str):
        try:
            sizes = [tuple(int(v) for v in s.split("x")) for s in sizes.split(",")]
        except ValueError as exc:
            raise ConfigError("sizes must look like 2x3,3x5") from exc
    rows = []
    for idx, (N, M) in enumerate(sizes):
        if N < 1 or M < 1:
            raise ConfigError("track and measurement counts must be positive")
        rng = np.random.default_rng(replica_seed(cfg["seed"], idx))
        cost = mtda.random_cost_matrix(N, M, rng)
        t0 = time.perf_counter()
        q = mtda.build_qubo(cost)
        t1 = time.perf_counter()
        sol = solvers.hungarian_solve(cost)
        t2 = time.perf_counter()
        row = [N, M, q.n_var, mtda.nonzero_count(q), mtda.reference_nonzero_formula(N, M),
               sol.objective]
        if cfg["timing"]:
            row += [t1 - t0, t2 - t1]
        rows.append(row)
    cols = ["N", "M", "n_var", "nnz_upper", "nnz_reference", "hungarian_objective"]
    if cfg["timing"]:
        cols += ["build_s", "solve_s"]
    return ResultTable(cols, rows, cfg)


def cmd_track(cfg: dict) -> ResultTable:
    kinds = cfg["scenario"].split(",") if isinstance(cfg["scenario"], str) else cfg["scenario"]
    rows = []
    for kind in kinds:
        if kind not in tracking.KINDS:
            raise ConfigError(f"unknown scenario {kind!r}")
        for i in range(cfg["runs"]):
            s = tracking.Scenario.preset(kind, seed=replica_seed(cfg["seed"], i),
                                         n_steps=cfg["steps"])
            gnn = tracking.run_scenario(s, solvers.gnn_solve)
            res = tracking.run_scenario(s, solvers.hungarian_solve, shadow=solvers.gnn_solve)
            dominated = all(e.objective <= e.shadow_objective + 1e-9 for e in res.events)
            row = [kind, s.seed, res.ct, res.md, res.fa, gnn.ct, gnn.md, gnn.fa, dominated]
            if cfg["timing"]:
                row.append(res.mean_step_time)
            rows.append(row)
    cols = ["scenario", "seed", "ct", "md", "fa", "gnn_ct", "gnn_md", "gnn_fa",
            "hungarian_le_gnn"]
    if cfg["timing"]:
        cols.append("mean_step_s")
    return ResultTable(cols, rows, cfg)


def deep_identity_circuit(n_pairs: int) -> Circuit:
    """Bell pair followed by ``n_pairs`` CX-CX identities (2*n_pairs + 1 two-qubit gates)."""
    c = mitigation.bell_circuit()
    for _ in range(n_pairs):
        c.cx(0, 1).cx(0, 1)
    return c


def cmd_zne(cfg: dict) -> ResultTable:
    noise = _noise(cfg)
    if noise.is_noiseless:
        raise ConfigError("zne needs --noise-p2q > 0")
    studies = {"bell": mitigation.bell_circuit(),
               "deep": deep_identity_circuit(cfg["deep_pairs"])}
    obs = mitigation.zz_observable((0, 1))
    rows = []
    for name, circ in studies.items():
        shots = cfg["shots"] if name == "bell" else cfg["deep_shots"]
        for i in range(cfg["runs"]):
            seed = replica_seed(cfg["seed"], i)
            r = mitigation.zne_expectation(circ, obs, noise, shots, np.random.default_rng(seed))
            rows.append([name, circ.two_qubit_count, seed, r.raw, r.extrapolated,
                         abs(1 - r.extrapolated) < abs(1 - r.raw)])
    return ResultTable(["study", "two_qubit_gates", "seed", "raw_zz", "zne_zz", "improved"],
                       rows, cfg)


COMMANDS = {
    "tiger": cmd_tiger, "grover": cmd_grover, "biqae": cmd_biqae, "qaoa": cmd_qaoa,
    "mtda": cmd_mtda, "track": cmd_track, "zne": cmd_zne,
}

DEFAULTS = {
    "tiger": dict(obs="0,0,0,1,1,1,0,0", horizon=1, evidence="biqae", biqae_iterations=6,
                  biqae_shots=300),
    "grover": dict(prior="0.97,0.03", target_obs=1, kmax=5),
    "biqae": dict(amplitudes="0.1,0.2,0.3,0.4,0.5,0.6,0.7", runs=100, iterations=6,
                  prior="uniform"),
    "qaoa": dict(tracks=2, meas=3, ks="1,2,3", ps="1,2,4,8", runs=5, maxiter=200,
                 basis="polynomial"),
    "mtda": dict(sizes=",".join(f"{n}x{m}" for n, m in TABLE3_SIZES)),
    "track": dict(scenario="crossing,clutter,swarm", runs=10, steps=30),
    "zne": dict(runs=20, deep_pairs=30, deep_shots=20000),
}
SHOT_DEFAULTS = {"tiger": None, "grover": 10000, "biqae": 300, "qaoa": 4096, "zne": 100000}
NOISE_DEFAULTS = {"zne": 0.02}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--shots", type=int)
    common.add_argument("--noise-p2q", type=float, dest="noise_p2q")
    common.add_argument("--noise-p1q", type=float, dest="noise_p1q", default=0.0)
    common.add_argument("--out", type=Path)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--config", type=Path, help="JSON file whose keys override flags")
    common.add_argument("--timing", action="store_true", help="add wall-clock columns")

    p = argparse.ArgumentParser(prog="qptrack", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(**DEFAULTS.get(name, {}))
        return sp

    sp = add("tiger", "closed-loop Tiger run with circuit belief updates")
    sp.add_argument("--obs")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--evidence", choices=("exact", "biqae"))
    sp = add("grover", "amplitude amplification of the evidence branch")
    sp.add_argument("--prior")
    sp.add_argument("--target-obs", type=int, dest="target_obs")
    sp.add_argument("--kmax", type=int)
    sp = add("biqae", "amplitude-estimation coverage sweep")
    sp.add_argument("--amplitudes")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--prior", choices=("uniform", "gaussian"))
    sp = add("qaoa", "schedule sensitivity sweep over (k, p)")
    sp.add_argument("--tracks", type=int)
    sp.add_argument("--meas", type=int)
    sp.add_argument("--ks")
    sp.add_argument("--ps")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--maxiter", type=int)
    sp.add_argument("--basis", choices=qaoa.BASES)
    sp = add("mtda", "QUBO size and sparsity scaling")
    sp.add_argument("--sizes", help="comma list like 2x3,10x15")
    sp = add("track", "end-to-end tracking scenarios")
    sp.add_argument("--scenario")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--steps", type=int)
    sp = add("zne", "zero-noise extrapolation studies")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--deep-pairs", type=int, dest="deep_pairs")
    sp.add_argument("--deep-shots", type=int, dest="deep_shots")
    sp = sub.add_parser("repro", parents=[common], help="run every experiment into a directory")
    sp.add_argument("--quick", action="store_true", help="reduced replica counts")
    return p


_META_KEYS = {"command", "out", "format", "config", "quick"}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in _META_KEYS}
    if args.config is not None:
        try:
            override = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(override, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(override)
    cmd = args.command
    if cfg.get("shots") is None:
        cfg["shots"] = SHOT_DEFAULTS.get(cmd)
    if cfg.get("noise_p2q") is None:
        cfg["noise_p2q"] = NOISE_DEFAULTS.get(cmd, 0.0)
    cfg["experiment"] = cmd
    return cfg


def _emit(table: ResultTable, out: Path | None, fmt: str) -> None:
    text = table.render(fmt)
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


QUICK = {"biqae": {"runs": 10}, "qaoa": {"runs": 2, "ps": "1,2,8"}, "track": {"runs": 3},
         "zne": {"runs": 5}}


def cmd_repro(args: argparse.Namespace) -> int:
    outdir = args.out or Path("repro_out")
    outdir.mkdir(parents=True, exist_ok=True)
    parser = _parser()
    manifest = {}
    for name, fn in COMMANDS.items():
        ns = parser.parse_args([name, "--seed", str(args.seed)])
        cfg = resolve_config(ns)
        if args.quick:
            cfg.update(QUICK.get(name, {}))
        cfg["timing"] = args.timing
        path = outdir / f"{name}.{args.format}"
        _emit(fn(cfg), path, args.format)
        manifest[name] = path.name
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


def _fail(category: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return 2


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "repro":
            return cmd_repro(args)
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        table = COMMANDS[args.command](cfg)
        if cfg.get("timing"):
            table.metadata["wall_clock_s"] = repr(time.perf_counter() - t0)
        _emit(table, args.out, args.format)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except pomdp.ImpossibleObservation as exc:
        return _fail("impossible_observation", str(exc))
    except KeyError as exc:
        return _fail("config", f"bad or missing setting: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
