"""Experiment configuration, seeded streams and the train / verify / baselines runners."""
from __future__ import annotations

import copy
import datetime as _dt
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .convergence import (CheckResult, ConvergenceReport, boundedness_audit, check_step_schedule,
                          estimate_contraction, noise_statistics, oracle_agreement, replay_norms,
                          sample_noise, uniform_sampler)
from .mdp import ConfigError, MdpConfig, n_states, neighborhood_cost, observe_state, state_index
from .network import (TrafficNetwork, build_single_junction, build_three_junction_example,
                      load_network, network_from_dict, validate_network)
from .oracle import (ExplicitMDP, async_value_iteration, dumps_mdp, loads_mdp, mdp_from_network,
                     q_operator_F, random_mdp, round_robin_stream, solve_q_star, value_iteration)
from .qlearn import (Exploration, LearningConfig, QTable, StepSchedule, TrainingTrace,
                     VisitCounters, cost_bound, dumps_qtable, q_learning_on_mdp, run_marl_episode)
from .sim import GreenSchedule, TrafficSimulator

EXIT_OK, EXIT_INVALID, EXIT_AUDIT, EXIT_IO = 0, 1, 2, 3

STREAMS = {"simulation": 0, "exploration": 1, "estimation": 2}
BASELINE_CSV_HEADER = ("policy", "mean_cost", "stderr", "seeds")
BUILTIN_NETWORKS: dict[str, Callable[..., TrafficNetwork]] = {
    "three_junction": build_three_junction_example,
    "single_junction": build_single_junction,
}
AUDIT_CHECKS = ("step_schedule", "contraction", "async_vi", "noise", "boundedness",
                "oracle_agreement")


class ConfigInvalid(ConfigError):
    """Raised with every violated field at once."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


class NetworkInvalid(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


# --- seeds ----------------------------------------------------------------------

def stream(root_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of the root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), STREAMS[name], *extra]))


# --- configuration ----------------------------------------------------------------

_DEFAULTS: dict[str, Any] = {
    "network": {"builtin": "three_junction"},
    "mdp": {"d1": 5, "d2": 10, "action_durations": [10, 20, 30]},
    "learning": {
        "discount": 0.9,
        "step": {"kind": "harmonic", "offset": 1.0, "scale": 1.0},
        "step_clock": "visits",
        "exploration": {"kind": "epsilon", "epsilon0": 1.0, "decay_rate": 1e-3, "floor": 0.01},
        "q_init": 0.0,
        "cycles": 3000,
        "seed": 0,
    },
    "audits": [{"check": "step_schedule"}],
    "baselines": {"seeds": 20, "eval_cycles": 300, "window": 200},
    "estimation": {"junction": 0, "samples": 300, "truncation": None, "discount": None},
    "output_dir": "runs/default",
}

_AUDIT_KEYS = {
    "step_schedule": set(),
    "contraction": {"mdp", "pairs", "tolerance"},
    "async_vi": {"mdp", "tolerance"},
    "noise": {"mdp", "samples_per_pair", "z", "fraction", "tolerance"},
    "boundedness": {"trace", "tolerance"},
    "oracle_agreement": {"mdp", "steps", "min_visits", "tolerance"},
}


@dataclass
class ExperimentConfig:
    network: Any = field(default_factory=lambda: copy.deepcopy(_DEFAULTS["network"]))
    mdp: MdpConfig = field(default_factory=MdpConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    cycles: int = 3000
    seed: int = 0
    audits: list = field(default_factory=lambda: copy.deepcopy(_DEFAULTS["audits"]))
    baselines: dict = field(default_factory=lambda: dict(_DEFAULTS["baselines"]))
    estimation: dict = field(default_factory=lambda: dict(_DEFAULTS["estimation"]))
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        ln = self.learning
        return {
            "network": copy.deepcopy(self.network),
            "mdp": {"d1": self.mdp.d1, "d2": self.mdp.d2,
                    "action_durations": list(self.mdp.action_durations)},
            "learning": {
                "discount": ln.discount,
                "step": ln.step.to_dict(),
                "step_clock": ln.step_clock,
                "exploration": {"kind": ln.exploration.kind, "epsilon0": ln.exploration.epsilon0,
                                "decay_rate": ln.exploration.decay_rate,
                                "floor": ln.exploration.floor},
                "q_init": ln.q_init,
                "cycles": self.cycles,
                "seed": self.seed,
            },
            "audits": copy.deepcopy(self.audits),
            "baselines": dict(self.baselines),
            "estimation": dict(self.estimation),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return parse_config(data)

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None
                       ) -> "ExperimentConfig":
        cfg = parse_config(self.to_dict())
        if seed is not None:
            cfg.seed = int(seed)
        if output_dir is not None:
            cfg.output_dir = str(output_dir)
        return cfg


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _section(data, name, problems) -> dict:
    raw = data.get(name, _DEFAULTS[name])
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected an object")
        return dict(_DEFAULTS[name])
    unknown = sorted(set(raw) - set(_DEFAULTS[name]))
    for k in unknown:
        problems.append(f"{name}.{k}: unknown key")
    merged = copy.deepcopy(_DEFAULTS[name])
    merged.update({k: v for k, v in raw.items() if k in _DEFAULTS[name]})
    return merged


def _check_mdp_source(src, where: str, problems: list[str]) -> None:
    if src is None or src == "network":
        return
    if isinstance(src, str):
        return                              # file path, resolved at run time
    if not isinstance(src, dict) or src.get("kind") not in ("random", "network", "file"):
        problems.append(f"{where}: expected 'network', a file path or "
                        "{kind: random|network|file, ...}")
        return
    allowed = {"random": {"kind", "n_states", "n_actions", "discount", "seed"},
               "network": {"kind", "junction", "samples", "truncation", "discount"},
               "file": {"kind", "path"}}[src["kind"]]
    for k in sorted(set(src) - allowed):
        problems.append(f"{where}.{k}: unknown key")
    if src["kind"] == "random":
        for k in ("n_states", "n_actions"):
            if not (_is_int(src.get(k)) and src[k] >= 1):
                problems.append(f"{where}.{k}: must be a positive integer")
    if "discount" in src and src["discount"] is not None and not (
            _is_num(src["discount"]) and 0 < src["discount"] < 1):
        problems.append(f"{where}.discount: must lie in (0,1)")
    if src["kind"] == "file" and not isinstance(src.get("path"), str):
        problems.append(f"{where}.path: must be a string")


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded config document; raises ConfigInvalid listing every problem."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigInvalid(["<root>: expected an object"])
    for k in sorted(set(data) - set(_DEFAULTS)):
        problems.append(f"{k}: unknown key")

    network = data.get("network", _DEFAULTS["network"])
    if isinstance(network, dict) and "builtin" in network:
        if network["builtin"] not in BUILTIN_NETWORKS:
            problems.append(f"network.builtin: unknown network {network['builtin']!r}")
        params = network.get("params", {})
        for k in sorted(set(network) - {"builtin", "params"}):
            problems.append(f"network.{k}: unknown key")
        if not isinstance(params, dict):
            problems.append("network.params: expected an object")
    elif isinstance(network, dict):
        for k in sorted(set(network) - {"junctions", "lanes", "neighborhoods"}):
            problems.append(f"network.{k}: unknown key")
    elif not isinstance(network, str):
        problems.append("network: expected a file path or an object")

    m = _section(data, "mdp", problems)
    mdp_cfg = MdpConfig()
    if not (_is_num(m["d1"]) and _is_num(m["d2"]) and 0 < m["d1"] < m["d2"]):
        problems.append(f"mdp.d1/mdp.d2: need 0 < d1 < d2, got d1={m['d1']!r}, d2={m['d2']!r}")
    durs = m["action_durations"]
    if not (isinstance(durs, list) and len(durs) == 3 and all(_is_int(d) and d > 0 for d in durs)
            and len(set(durs)) == 3):
        problems.append(f"mdp.action_durations: need three distinct positive integers, got {durs!r}")
    else:
        try:
            mdp_cfg = MdpConfig(m["d1"], m["d2"], tuple(durs))
        except ConfigError:
            pass

    lr = _section(data, "learning", problems)
    if not (_is_num(lr["discount"]) and 0 < lr["discount"] < 1):
        problems.append(f"learning.discount: must lie in (0,1), got {lr['discount']!r}")
    step = StepSchedule()
    if not isinstance(lr["step"], dict):
        problems.append("learning.step: expected an object")
    else:
        allowed = {"kind", "offset", "scale", "exponent", "value"}
        for k in sorted(set(lr["step"]) - allowed):
            problems.append(f"learning.step.{k}: unknown key")
        try:
            step = StepSchedule(**{k: v for k, v in lr["step"].items() if k in allowed})
        except (TypeError, ValueError) as exc:
            problems.append(f"learning.step: {exc}")
    if lr["step_clock"] not in ("visits", "global"):
        problems.append(f"learning.step_clock: must be 'visits' or 'global', got {lr['step_clock']!r}")
    expl = Exploration()
    if not isinstance(lr["exploration"], dict):
        problems.append("learning.exploration: expected an object")
    else:
        allowed = {"kind", "epsilon0", "decay_rate", "floor"}
        for k in sorted(set(lr["exploration"]) - allowed):
            problems.append(f"learning.exploration.{k}: unknown key")
        try:
            expl = Exploration(**{k: v for k, v in lr["exploration"].items() if k in allowed})
        except (TypeError, ValueError) as exc:
            problems.append(f"learning.exploration: {exc}")
    if not _is_num(lr["q_init"]):
        problems.append("learning.q_init: must be a finite number")
    if not (_is_int(lr["cycles"]) and lr["cycles"] >= 0):
        problems.append(f"learning.cycles: must be a non-negative integer, got {lr['cycles']!r}")
    if not (_is_int(lr["seed"]) and 0 <= lr["seed"] < 2 ** 64):
        problems.append(f"learning.seed: must be an integer in [0, 2^64), got {lr['seed']!r}")

    audits = data.get("audits", _DEFAULTS["audits"])
    if not isinstance(audits, list):
        problems.append("audits: expected a list")
        audits = []
    for n, a in enumerate(audits):
        where = f"audits[{n}]"
        if not isinstance(a, dict) or a.get("check") not in AUDIT_CHECKS:
            problems.append(f"{where}.check: must be one of {', '.join(AUDIT_CHECKS)}")
            continue
        for k in sorted(set(a) - _AUDIT_KEYS[a["check"]] - {"check"}):
            problems.append(f"{where}.{k}: unknown key")
        if "tolerance" in a and not (_is_num(a["tolerance"]) and a["tolerance"] >= 0):
            problems.append(f"{where}.tolerance: must be a non-negative number")
        for k in ("pairs", "samples_per_pair", "steps", "min_visits"):
            if k in a and not (_is_int(a[k]) and a[k] >= 1):
                problems.append(f"{where}.{k}: must be a positive integer")
        if "fraction" in a and not (_is_num(a["fraction"]) and 0 <= a["fraction"] <= 1):
            problems.append(f"{where}.fraction: must lie in [0,1]")
        if "z" in a and not (_is_num(a["z"]) and a["z"] > 0):
            problems.append(f"{where}.z: must be positive")
        if "trace" in a and not isinstance(a["trace"], str):
            problems.append(f"{where}.trace: must be a path")
        if "mdp" in a:
            _check_mdp_source(a["mdp"], f"{where}.mdp", problems)

    b = _section(data, "baselines", problems)
    for k in ("seeds", "eval_cycles", "window"):
        if not (_is_int(b[k]) and b[k] >= 1):
            problems.append(f"baselines.{k}: must be a positive integer")
    if _is_int(b["window"]) and _is_int(b["eval_cycles"]) and b["window"] > b["eval_cycles"]:
        problems.append("baselines.window: must not exceed baselines.eval_cycles")

    e = _section(data, "estimation", problems)
    if not (_is_int(e["junction"]) and e["junction"] >= 0):
        problems.append("estimation.junction: must be a non-negative integer")
    if not (_is_int(e["samples"]) and e["samples"] >= 1):
        problems.append("estimation.samples: must be a positive integer")
    if e["truncation"] is not None and not (_is_int(e["truncation"]) and e["truncation"] >= 1):
        problems.append("estimation.truncation: must be a positive integer or null")
    if e["discount"] is not None and not (_is_num(e["discount"]) and 0 < e["discount"] < 1):
        problems.append("estimation.discount: must lie in (0,1) or be null")

    out = data.get("output_dir", _DEFAULTS["output_dir"])
    if not isinstance(out, str) or not out:
        problems.append("output_dir: must be a non-empty path")

    if problems:
        raise ConfigInvalid(problems)
    learning = LearningConfig(float(lr["discount"]), step, lr["step_clock"], expl,
                              float(lr["q_init"]))
    return ExperimentConfig(copy.deepcopy(network), mdp_cfg, learning, lr["cycles"], lr["seed"],
                            copy.deepcopy(audits), b, e, out)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid([f"<file>: not valid JSON ({exc})"]) from None
    return parse_config(data)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()


def resolve_network(cfg: ExperimentConfig, base: Path | None = None) -> TrafficNetwork:
    spec = cfg.network
    try:
        if isinstance(spec, str):
            path = Path(spec) if base is None or Path(spec).is_absolute() else base / spec
            if not path.exists():
                raise MissingArtifact(f"network file not found: {path}")
            net = load_network(path)
        elif "builtin" in spec:
            net = BUILTIN_NETWORKS[spec["builtin"]](**spec.get("params", {}))
        else:
            net = network_from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkInvalid(f"network: could not build network ({exc})") from None
    report = validate_network(net)
    if not report.ok:
        raise NetworkInvalid("network: " + "; ".join(v.message for v in report))
    return net


# --- manifest -------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str
    started: str
    finished: str = ""
    files: list[str] = field(default_factory=list)
    passed: bool | None = None
    # in-memory results for callers (report, baseline rows, estimation report)
    results: Any = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"command": self.command, "config_hash": self.config_hash, "seed": self.seed,
             "version": self.version, "started": self.started, "finished": self.finished,
             "files": sorted(self.files)}
        if self.passed is not None:
            d["passed"] = self.passed
        return d

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _start(command: str, cfg: ExperimentConfig) -> tuple[RunManifest, Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RunManifest(command, config_hash(cfg), cfg.seed, __version__, _now()), out


def _emit(man: RunManifest, out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)
    if name not in man.files:
        man.files.append(name)


def _finish(man: RunManifest, out: Path) -> RunManifest:
    man.finished = _now()
    man.write(out)
    return man


# --- train ----------------------------------------------------------------------

@dataclass
class TrainingRun:
    tables: dict[int, QTable]
    trace: TrainingTrace
    counters: dict[int, VisitCounters]


def train(cfg: ExperimentConfig, net: TrafficNetwork, seed: int | None = None,
          replicate: tuple[int, ...] = ()) -> TrainingRun:
    seed = cfg.seed if seed is None else seed
    tables = {jn.id: QTable.for_junction(net, jn.id, cfg.mdp.n_actions, cfg.learning.q_init)
              for jn in net.junctions}
    res = run_marl_episode(net, tables, cfg.cycles, cfg.learning, cfg.mdp,
                           stream(seed, "simulation", *replicate),
                           stream(seed, "exploration", *replicate))
    return TrainingRun(tables, res.trace, res.counters)


def run_train(cfg: ExperimentConfig) -> RunManifest:
    net = resolve_network(cfg)
    man, out = _start("train", cfg)
    run = train(cfg, net)
    _emit(man, out, "config.json", dumps_config(cfg))
    buf = io.StringIO()
    run.trace.write_csv(buf)
    _emit(man, out, "trace.csv", buf.getvalue())
    for j, tbl in sorted(run.tables.items()):
        _emit(man, out, f"qtable_j{j}.json",
              dumps_qtable(tbl, cfg.mdp.action_durations, cfg.learning.discount,
                           cfg.learning.step))
    return _finish(man, out)


# --- verify ---------------------------------------------------------------------

def _resolve_mdp(src, cfg: ExperimentConfig, net_getter, rng: np.random.Generator,
                 out: Path) -> ExplicitMDP:
    if src is None or src == "network":
        src = {"kind": "network"}
    if isinstance(src, str):
        src = {"kind": "file", "path": src}
    kind = src["kind"]
    if kind == "file":
        path = Path(src["path"])
        if not path.is_absolute() and not path.exists():
            path = out / path
        if not path.exists():
            raise MissingArtifact(f"MDP file not found: {src['path']}")
        return loads_mdp(path.read_text())
    if kind == "random":
        g = np.random.default_rng(src["seed"]) if "seed" in src else rng
        return random_mdp(src["n_states"], src["n_actions"], src.get("discount") or 0.9, g)
    est = dict(cfg.estimation)
    est.update({k: v for k, v in src.items() if k != "kind" and v is not None})
    return estimate_mdp(cfg, net_getter(), rng, est)[0]


def estimate_mdp(cfg: ExperimentConfig, net: TrafficNetwork, rng: np.random.Generator,
                 est: dict | None = None):
    est = dict(cfg.estimation if est is None else est)
    return mdp_from_network(net, rng, junction=est["junction"], config=cfg.mdp,
                            discount=est.get("discount") or cfg.learning.discount,
                            truncation=est.get("truncation"), samples=est["samples"])


def run_audit(audit: dict, cfg: ExperimentConfig, net_getter, rng: np.random.Generator,
              out: Path) -> CheckResult:
    check = audit["check"]
    if check == "step_schedule":
        v = check_step_schedule(cfg.learning.step)
        verdict = {True: "pass", False: "fail", None: "unclassifiable"}[v.passed]
        return CheckResult(check, cfg.learning.step.kind, float(v.passed is True), 0.0, 0,
                           verdict, {"reason": v.reason})

    if check == "boundedness":
        path = Path(audit.get("trace", "trace.csv"))
        if not path.is_absolute() and not path.exists():
            path = out / path
        if not path.exists():
            raise MissingArtifact(f"training trace not found: {path}")
        with open(path) as fh:
            trace = TrainingTrace.read_csv(fh)
        net = net_getter()
        per_agent = {jn.id: n_states(jn.n_lanes, jn.n_phases) * cfg.mdp.n_actions
                     for jn in net.junctions}
        norms = replay_norms(trace, cfg.learning.q_init, per_agent)
        v = boundedness_audit(trace, cost_bound(net), cfg.learning.discount,
                              abs(cfg.learning.q_init), norms)
        ok = v.sup_norm <= v.bound + audit.get("tolerance", 1e-9) * max(1.0, v.bound)
        return CheckResult(check, str(path.name), v.sup_norm, v.bound, len(trace),
                           "pass" if ok else "fail",
                           {"excess_nonincreasing": v.excess_nonincreasing})

    mdp = _resolve_mdp(audit.get("mdp"), cfg, net_getter, rng, out)
    subject = f"mdp[{mdp.n_states}x{mdp.n_actions}, beta={mdp.discount}]"
    if check == "contraction":
        tol = audit.get("tolerance", 1e-9)
        pairs = audit.get("pairs", 1000)
        scale = max(1.0, float(np.abs(mdp.cost).max()) / (1 - mdp.discount))
        est = estimate_contraction(lambda q: q_operator_F(mdp, q),
                                   uniform_sampler(mdp.cost.shape, -scale, scale), pairs, rng)
        ok = est.beta_hat <= mdp.discount + tol
        return CheckResult(check, subject, est.beta_hat, mdp.discount + tol, est.pairs_used,
                           "pass" if ok else "fail",
                           {"one_sided": est.one_sided_hat, "skipped": est.skipped})
    if check == "async_vi":
        tol = audit.get("tolerance", 1e-6)
        J, _ = value_iteration(mdp, 1e-12)
        res = async_value_iteration(mdp, round_robin_stream(mdp.n_states), 1e-12)
        gap = float(np.abs(res.J - J).max())
        return CheckResult(check, subject, gap, tol, res.updates,
                           "pass" if res.converged and gap <= tol else "fail")
    if check == "noise":
        per = audit.get("samples_per_pair", 200)
        z = audit.get("z", 3.0)
        frac = audit.get("fraction", 0.95)
        Q = solve_q_star(mdp, 1e-10)
        rep = noise_statistics(sample_noise(mdp, Q, per, rng), n_min=min(per, 100), z=z)
        ok = rep.straddle_fraction >= frac and rep.bound_fraction == 1.0
        return CheckResult(check, subject, rep.straddle_fraction, frac, per * mdp.n_pairs,
                           "pass" if ok else "fail",
                           {"bound_fraction": rep.bound_fraction, "implied_K": rep.implied_K})
    if check == "oracle_agreement":
        tol = audit.get("tolerance", 0.05)
        res = q_learning_on_mdp(mdp, audit.get("steps", 100_000), rng, step=cfg.learning.step,
                                exploration="ucb", step_clock=cfg.learning.step_clock)
        gap = oracle_agreement({0: res.Q}, {0: mdp}, {0: res.counters},
                               v_min=audit.get("min_visits", 100), tol=tol)[0]
        return CheckResult(check, subject, gap.gap_visited, tol * max(1.0, gap.q_star_norm),
                           gap.pairs_compared, "pass" if gap.passed else "fail",
                           {"policy_agreement": gap.policy_agreement})
    raise ValueError(f"unknown check {check!r}")


def run_verify(cfg: ExperimentConfig) -> RunManifest:
    man, out = _start("verify", cfg)
    rng = stream(cfg.seed, "estimation")
    cache: list[TrafficNetwork] = []

    def net_getter():
        if not cache:
            cache.append(resolve_network(cfg))
        return cache[0]

    report = ConvergenceReport()
    for audit in cfg.audits:
        report.add(run_audit(audit, cfg, net_getter, rng, out))
    buf = io.StringIO()
    report.write_csv(buf)
    _emit(man, out, "report.csv", buf.getvalue())
    _emit(man, out, "report.json", report.to_json())
    man.passed = report.passed
    man.results = report
    return _finish(man, out)


# --- baselines ------------------------------------------------------------------

def evaluate_policy(net: TrafficNetwork, choose: Callable[[int, int, int], int], cycles: int,
                    window: int, mdp_config: MdpConfig, rng_sim: np.random.Generator) -> float:
    """Mean network cost (average over agents) across the last ``window`` of ``cycles``.

    ``choose(junction, state_index, t)`` returns an action index; phases rotate
    as in training.
    """
    allowed = mdp_config.action_durations
    sim = TrafficSimulator(net, rng_sim)
    schedule = GreenSchedule.uniform(net, allowed[1], allowed)
    d1, d2 = mdp_config.d1, mdp_config.d2
    costs = []
    for t in range(cycles):
        durations = dict(schedule.durations)
        for jn in net.junctions:
            p = t % jn.n_phases
            s = state_index(observe_state(net, sim.lanes, jn.id, p, d1, d2), jn.n_lanes,
                            jn.n_phases)
            durations[(jn.id, p)] = allowed[choose(jn.id, s, t)]
        schedule = GreenSchedule(durations, allowed)
        sim.advance(schedule)
        if t >= cycles - window:
            costs.append(np.mean([neighborhood_cost(net, sim.lanes, jn.id, d1, d2).value
                                  for jn in net.junctions]))
    return float(np.mean(costs)) if costs else 0.0


@dataclass
class BaselineRow:
    policy: str
    mean_cost: float
    stderr: float
    seeds: int
    per_seed: list[float] = field(default_factory=list, repr=False)


def compare_baselines(cfg: ExperimentConfig, net: TrafficNetwork) -> list[BaselineRow]:
    """Learned greedy, fixed Medium and uniform-random policies over R replicates.

    Each replicate trains on its own sub-streams, then evaluates the three
    policies on a common simulation stream.
    """
    b = cfg.baselines
    results: dict[str, list[float]] = {"learned_greedy": [], "fixed_medium": [],
                                       "uniform_random": []}
    A = cfg.mdp.n_actions
    for r in range(b["seeds"]):
        run = train(cfg, net, replicate=(r,))
        greedy = {j: np.argmin(t.values, axis=1) for j, t in run.tables.items()}
        act_rng = stream(cfg.seed, "exploration", 1_000_000 + r)
        policies = {
            "learned_greedy": lambda j, s, t: int(greedy[j][s]),
            "fixed_medium": lambda j, s, t: 1,
            "uniform_random": lambda j, s, t: int(act_rng.integers(A)),
        }
        for name, fn in policies.items():
            rng_eval = stream(cfg.seed, "simulation", 1_000_000 + r)
            results[name].append(evaluate_policy(net, fn, b["eval_cycles"], b["window"],
                                                 cfg.mdp, rng_eval))
    rows = []
    for name, vals in results.items():
        v = np.array(vals)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        rows.append(BaselineRow(name, float(v.mean()), se, len(v), vals))
    return rows


def baselines_csv(rows: list[BaselineRow]) -> str:
    lines = [",".join(BASELINE_CSV_HEADER)]
    lines += [f"{r.policy},{r.mean_cost!r},{r.stderr!r},{r.seeds}" for r in rows]
    return "\n".join(lines) + "\n"


def run_baselines(cfg: ExperimentConfig) -> RunManifest:
    net = resolve_network(cfg)
    man, out = _start("baselines", cfg)
    rows = compare_baselines(cfg, net)
    _emit(man, out, "baselines.csv", baselines_csv(rows))
    man.results = rows
    return _finish(man, out)


# --- make-mdp --------------------------------------------------------------------

def run_make_mdp(cfg: ExperimentConfig) -> RunManifest:
    net = resolve_network(cfg)
    man, out = _start("make-mdp", cfg)
    mdp, rep = estimate_mdp(cfg, net, stream(cfg.seed, "estimation"))
    _emit(man, out, f"mdp_j{rep.junction}.json", dumps_mdp(mdp))
    man.results = rep
    return _finish(man, out)
