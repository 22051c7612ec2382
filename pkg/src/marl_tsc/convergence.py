"""Numerical checks of the stochastic-approximation convergence conditions.

Everything here reads immutable snapshots (explicit MDPs, frozen Q arrays,
finished traces) and reports; nothing feeds back into training.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .oracle import ExplicitMDP, q_operator_F, solve_q_star
from .qlearn import QTable, StepSchedule, TrainingTrace, VisitCounters

REPORT_CSV_HEADER = ("check", "subject", "value", "tolerance", "samples", "verdict")


@dataclass
class CheckResult:
    check: str
    subject: str
    value: float
    tolerance: float
    samples: int
    verdict: str                       # "pass" | "fail" | "unclassifiable"
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@dataclass
class ConvergenceReport:
    results: list[CheckResult] = field(default_factory=list)

    def add(self, result: CheckResult) -> CheckResult:
        self.results.append(result)
        return result

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        for r in self.results:
            w.writerow([r.check, r.subject, repr(float(r.value)), repr(float(r.tolerance)),
                        r.samples, r.verdict])

    def to_json(self) -> str:
        return json.dumps({"results": [asdict(r) for r in self.results]}, indent=2,
                          default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


# --- step sizes (A2) -------------------------------------------------------------

@dataclass(frozen=True)
class StepVerdict:
    passed: bool | None
    reason: str


def check_step_schedule(schedule) -> StepVerdict:
    """Classify sum gamma = inf and sum gamma^2 < inf analytically by family."""
    kind = getattr(schedule, "kind", None)
    if kind == "harmonic":
        return StepVerdict(True, "c/(t+b): harmonic sum diverges, squares form a convergent p-series")
    if kind == "polynomial":
        e = schedule.exponent
        if e <= 0.5:
            return StepVerdict(False, f"exponent {e} <= 1/2: sum of squares diverges")
        if e > 1:
            return StepVerdict(False, f"exponent {e} > 1: steps are summable")
        return StepVerdict(True, f"exponent {e} in (1/2, 1]: sum diverges, squares converge")
    if kind == "constant":
        return StepVerdict(False, "constant step: sum of squares diverges")
    return StepVerdict(None, f"unsupported schedule family {kind!r}")


# --- contraction (A1 / sup-norm Lipschitz) --------------------------------------

@dataclass
class ContractionEstimate:
    beta_hat: float
    componentwise_hat: float
    one_sided_hat: float
    witness: tuple[np.ndarray, np.ndarray] | None
    pairs_used: int
    skipped: int
    componentwise_le_global: bool


def uniform_sampler(shape: tuple[int, ...], low: float = -10.0, high: float = 10.0):
    def draw(rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(low, high, size=shape)
    return draw


def estimate_contraction(F: Callable[[np.ndarray], np.ndarray], sampler, pairs: int,
                         rng: np.random.Generator) -> ContractionEstimate:
    """Largest observed ||F(Q) - F(Q')||_inf / ||Q - Q'||_inf over random pairs.

    Also tracks the per-component ratio and the one-sided form
    max_i (F_i(Q) - F_i(Q')) / max_k (Q_k - Q'_k) used for asynchronous updates.
    """
    if pairs < 1:
        raise ValueError("need at least one pair")
    best, best_comp, best_one = -math.inf, -math.inf, -math.inf
    witness = None
    used = skipped = 0
    comp_ok = True
    for _ in range(pairs):
        q1, q2 = sampler(rng), sampler(rng)
        dq = q1 - q2
        d = np.abs(dq).max()
        if d == 0:
            skipped += 1
            continue
        df = F(q1) - F(q2)
        ratio = np.abs(df).max() / d
        comp = (np.abs(df) / d).max()
        comp_ok &= bool(comp <= ratio)
        up = dq.max()
        if up > 0:
            best_one = max(best_one, df.max() / up)
        if ratio > best:
            best, witness = ratio, (q1, q2)
        best_comp = max(best_comp, comp)
        used += 1
    return ContractionEstimate(float(best), float(best_comp), float(best_one), witness,
                               used, skipped, comp_ok)


# --- martingale noise (A3) ----------------------------------------------------

@dataclass
class DriftSample:
    junction: int
    state: int
    action: int
    F_value: float          # c + beta min_b Q(s', b) - Q(s, a)
    h_estimate: float
    noise: float            # F_value - h_estimate
    epoch: int = 0
    variance_bound: float = math.nan    # Var(c) + max Q^2 at sampling time


def sample_noise(mdp: ExplicitMDP, Q: np.ndarray, samples_per_pair: int,
                 rng: np.random.Generator, junction: int = 0, epoch: int = 0,
                 pairs: Iterable[tuple[int, int]] | None = None) -> list[DriftSample]:
    """Sample the stochastic update term at a frozen Q; h is the exact conditional mean."""
    beta = mdp.discount
    h = q_operator_F(mdp, Q) - Q
    qmin = Q.min(axis=1)
    qmax_sq = float((Q ** 2).max())
    if pairs is None:
        pairs = [(s, a) for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    out = []
    for s, a in pairs:
        bound = float(mdp.cost_var[s, a]) + qmax_sq
        for _ in range(samples_per_pair):
            c, s2 = mdp.sample(s, a, rng)
            fv = c + beta * qmin[s2] - Q[s, a]
            out.append(DriftSample(junction, s, a, fv, float(h[s, a]), fv - float(h[s, a]),
                                   epoch, bound))
    return out


def drift_samples_from_trace(trace: TrainingTrace, epoch_length: int) -> list[DriftSample]:
    """Recover F = (q_after - q_before) / gamma per record, grouped by epoch.

    h is the running mean of the earlier samples of the same
    (junction, state, action, epoch) group; a group's first record is dropped.
    """
    sums: dict[tuple, float] = defaultdict(float)
    cnts: dict[tuple, int] = defaultdict(int)
    out = []
    for t, j, s, a, c, s2, g, qb, qa in trace.rows:
        fv = (qa - qb) / g
        key = (j, s, a, t // epoch_length)
        if cnts[key]:
            h = sums[key] / cnts[key]
            out.append(DriftSample(j, s, a, fv, h, fv - h, key[3]))
        sums[key] += fv
        cnts[key] += 1
    return out


@dataclass
class NoiseGroup:
    key: tuple
    count: int
    mean: float
    stderr: float
    mean_sq: float
    stderr_sq: float
    straddles_zero: bool
    variance_bound: float
    bound_ok: bool | None


@dataclass
class NoiseReport:
    groups: list[NoiseGroup]
    omitted: list[tuple]
    z: float

    @property
    def straddle_fraction(self) -> float:
        return (sum(g.straddles_zero for g in self.groups) / len(self.groups)
                if self.groups else math.nan)

    @property
    def bound_fraction(self) -> float:
        checked = [g for g in self.groups if g.bound_ok is not None]
        return sum(g.bound_ok for g in checked) / len(checked) if checked else math.nan

    @property
    def implied_K(self) -> float:
        """Smallest K with E[w^2] <= K (1 + max Q^2) over the groups (bound known)."""
        ks = []
        for g in self.groups:
            if not math.isnan(g.variance_bound):
                ks.append(g.mean_sq / (1.0 + g.variance_bound))
        return max(ks) if ks else math.nan


def noise_statistics(samples: Sequence[DriftSample], n_min: int = 100,
                     z: float = 3.0) -> NoiseReport:
    """Per (junction, state, action, epoch) noise mean and second moment checks.

    A group's mean straddles zero when |mean| <= z * stderr. The second-moment
    bound passes when mean(w^2) - z * stderr(w^2) <= Var(c) + max Q^2.
    """
    by_key: dict[tuple, list[DriftSample]] = defaultdict(list)
    for d in samples:
        by_key[(d.junction, d.state, d.action, d.epoch)].append(d)
    groups, omitted = [], []
    for key in sorted(by_key):
        rec = by_key[key]
        n = len(rec)
        if n < n_min:
            omitted.append(key)
            continue
        w = np.array([d.noise for d in rec])
        mean = float(w.mean())
        se = float(w.std(ddof=1) / math.sqrt(n))
        sq = w ** 2
        msq = float(sq.mean())
        se_sq = float(sq.std(ddof=1) / math.sqrt(n))
        straddle = abs(mean) <= z * se if se > 0 else abs(mean) <= 1e-12
        bound = rec[0].variance_bound
        ok = None if math.isnan(bound) else bool(msq - z * se_sq <= bound + 1e-12)
        groups.append(NoiseGroup(key, n, mean, se, msq, se_sq, bool(straddle), bound, ok))
    return NoiseReport(groups, omitted, z)


# --- boundedness (A4) -----------------------------------------------------------

@dataclass
class BoundednessVerdict:
    passed: bool
    sup_norm: float
    bound: float
    initial_norm: float
    initial_excursion: float
    max_excursion: float
    excess_nonincreasing: bool


def replay_norms(trace: TrainingTrace, q_init: float,
                 pairs_per_agent: Mapping[int, int]) -> np.ndarray:
    """Per-record ||Q_j||_inf of the updated agent, rebuilt from a trace."""
    current: dict[int, dict[tuple[int, int], float]] = defaultdict(dict)
    out = np.empty(len(trace))
    for k, (t, j, s, a, *_rest) in enumerate(trace.rows):
        qa = _rest[-1]
        current[j][(s, a)] = qa
        vals = current[j].values()
        m = max(abs(v) for v in vals)
        if len(current[j]) < pairs_per_agent[j]:
            m = max(m, abs(q_init))
        out[k] = m
    return out


def boundedness_audit(trace: TrainingTrace, c_max: float, discount: float,
                      q0_norm: float, norms: np.ndarray | None = None) -> BoundednessVerdict:
    """Check sup_t ||Q_t||_inf <= c_max / (1 - discount)."""
    bound = c_max / (1.0 - discount)
    if norms is None:
        norms = trace.column("q_norm")
    if len(norms) and np.isnan(norms).any():
        raise ValueError("trace carries no Q norms; rebuild them with replay_norms")
    sup = max([q0_norm, *norms]) if len(norms) else q0_norm
    junctions = trace.column("junction") if len(trace) else np.array([])
    nonincreasing = True
    for j in np.unique(junctions):
        path = np.concatenate([[q0_norm], norms[junctions == j]])
        excess = np.maximum(path - bound, 0.0)
        nonincreasing &= bool((np.diff(excess) <= 1e-12).all())
    tol = 1e-9 * max(1.0, bound)
    return BoundednessVerdict(
        passed=bool(sup <= bound + tol),
        sup_norm=float(sup),
        bound=bound,
        initial_norm=float(q0_norm),
        initial_excursion=float(max(q0_norm - bound, 0.0)),
        max_excursion=float(max(sup - bound, 0.0)),
        excess_nonincreasing=nonincreasing,
    )


# --- drift field and cooperative structure ---------------------------------------

@dataclass
class DriftEstimate:
    h_hat: np.ndarray
    stderr: np.ndarray
    h_exact: np.ndarray
    samples: int


def drift_field_estimate(mdp: ExplicitMDP, Q: np.ndarray, samples: int,
                         rng: np.random.Generator,
                         pairs: Iterable[tuple[int, int]] | None = None) -> DriftEstimate:
    """Monte-Carlo mean of the update term at Q next to the exact F(Q) - Q."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    beta = mdp.discount
    qmin = Q.min(axis=1)
    h_hat = np.full_like(Q, np.nan, dtype=float)
    se = np.full_like(Q, np.nan, dtype=float)
    if pairs is None:
        pairs = [(s, a) for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    for s, a in pairs:
        vals = np.empty(samples)
        for k in range(samples):
            c, s2 = mdp.sample(s, a, rng)
            vals[k] = c + beta * qmin[s2]
        h_hat[s, a] = vals.mean() - Q[s, a]
        se[s, a] = vals.std(ddof=1) / math.sqrt(samples) if samples > 1 else math.nan
    return DriftEstimate(h_hat, se, q_operator_F(mdp, Q) - Q, samples)


@dataclass
class JacobianDiagnostic:
    jacobian: np.ndarray          # d h_i / d x_k over flattened (state, action) pairs
    signs: np.ndarray
    boundary_columns: list[int]
    delta: float

    @property
    def offdiag_nonnegative(self) -> bool:
        off = self.jacobian.copy()
        np.fill_diagonal(off, 0.0)
        return bool((off >= -1e-9).all())


def cooperative_jacobian_signs(mdp: ExplicitMDP, Q: np.ndarray,
                               delta: float | None = None) -> JacobianDiagnostic:
    """Central differences of h(Q) = F(Q) - Q; purely diagnostic.

    Columns whose perturbation flips some state's argmin sit on a kink of the
    piecewise-linear map and are reported in ``boundary_columns``.
    """
    if delta is None:
        delta = 1e-3 * (1.0 + float(np.abs(Q).max()))
    if delta <= 0:
        raise ValueError("delta must be positive")
    n, A = Q.shape
    x0 = Q.reshape(-1).astype(float)
    dim = x0.size

    def h(x):
        q = x.reshape(n, A)
        return (q_operator_F(mdp, q) - q).reshape(-1)

    J = np.empty((dim, dim))
    base_arg = np.argmin(Q, axis=1)
    boundary = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = delta
        xp, xm = x0 + e, x0 - e
        J[:, k] = (h(xp) - h(xm)) / (2 * delta)
        s = k // A
        if (np.argmin(xp.reshape(n, A)[s]) != base_arg[s]
                or np.argmin(xm.reshape(n, A)[s]) != base_arg[s]):
            boundary.append(k)
    signs = np.sign(np.where(np.abs(J) < 1e-12, 0.0, J)).astype(int)
    return JacobianDiagnostic(J, signs, boundary, delta)


# --- learned vs oracle ----------------------------------------------------------

class StructuralMismatch(ValueError):
    pass


@dataclass
class AgentGap:
    agent: int
    gap_all: float
    gap_visited: float
    q_star_norm: float
    pairs_compared: int
    policy_agreement: float
    states_compared: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.gap_visited < self.tolerance * max(1.0, self.q_star_norm)


def oracle_agreement(trained: Mapping[int, np.ndarray | QTable],
                     mdps: Mapping[int, ExplicitMDP],
                     visits: Mapping[int, VisitCounters], v_min: int = 100,
                     tol: float = 0.05,
                     q_stars: Mapping[int, np.ndarray] | None = None) -> dict[int, AgentGap]:
    """Gap between learned tables and Q* of each agent's frozen-others MDP."""
    out = {}
    for j, tbl in trained.items():
        Q = tbl.values if isinstance(tbl, QTable) else np.asarray(tbl)
        mdp = mdps[j]
        if Q.shape != mdp.cost.shape:
            raise StructuralMismatch(f"agent {j}: table {Q.shape} vs MDP {mdp.cost.shape}")
        qs = q_stars[j] if q_stars is not None else solve_q_star(mdp, 1e-10)
        cnt = visits[j]
        mask = cnt.state_action_visits >= v_min
        diff = np.abs(Q - qs)
        gap_vis = float(diff[mask].max()) if mask.any() else math.nan
        states = np.flatnonzero(cnt.state_visits >= v_min)
        agree = (np.argmin(Q[states], axis=1) == np.argmin(qs[states], axis=1))
        out[j] = AgentGap(
            agent=j,
            gap_all=float(diff.max()),
            gap_visited=gap_vis,
            q_star_norm=float(np.abs(qs).max()),
            pairs_compared=int(mask.sum()),
            policy_agreement=float(agree.mean()) if states.size else math.nan,
            states_compared=int(states.size),
            tolerance=tol,
        )
    return out
