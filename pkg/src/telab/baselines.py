"""Non-learning TE policies: shortest path, load balance, and the NUM solver.

The NUM solver maximizes sum_k log(x_k) over per-path flows subject to link
capacities, per-session demand caps and flow consistency. It runs an
augmented-Lagrangian dual ascent on the capacity constraints with an inner
projected-gradient maximization; the per-session demand/positivity sets are
handled by exact projection. All solver math is in Mbps; results are returned
in bits/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import SplitAction
from .topology import NetworkGraph, SessionSpec

MBPS = 1e6


class SolverError(ValueError):
    pass


def sp_action(sessions: list[SessionSpec]) -> SplitAction:
    """All traffic on the first candidate path (min hop count, tie-broken)."""
    ratios = []
    for s in sessions:
        r = np.zeros(len(s.paths))
        r[0] = 1.0
        ratios.append(r)
    return SplitAction(tuple(ratios))


def lb_action(sessions: list[SessionSpec]) -> SplitAction:
    """Traffic spread evenly over all candidate paths."""
    return SplitAction(tuple(np.full(len(s.paths), 1.0 / len(s.paths))
                             for s in sessions))


@dataclass
class NumDiagnostics:
    max_capacity_violation: float   # relative, max over links
    max_demand_violation: float     # relative, max over sessions
    flow_residual: float            # |sum_j f_kj - x_k| / x_k, max over sessions
    stationarity: float             # scaled projected-gradient norm
    complementary_slackness: float  # max |dual_e * slack_e| (Mbps units)
    duality_gap: float
    iterations: int
    converged: bool


@dataclass
class NumSolution:
    throughput: np.ndarray                 # bits/s per session
    flows: tuple[np.ndarray, ...]          # bits/s per session, one entry per path
    degenerate: np.ndarray                 # bool per session (no positive demand)
    dual_capacity: np.ndarray              # multipliers per link (utility per Mbps)
    objective: float                       # sum of log(x_k in Mbps), active sessions
    diagnostics: NumDiagnostics = field(repr=False, default=None)


def _project_session(f: np.ndarray, cap: float, floor: float) -> np.ndarray:
    """Euclidean projection onto {f >= floor, sum(f) <= cap}."""
    g = np.maximum(f - floor, 0.0)
    budget = cap - floor * f.size
    if budget <= 0:
        return np.full_like(f, floor)
    if g.sum() <= budget:
        return g + floor
    # simplex projection: g_i -> max(g_i - theta, 0), sum == budget
    u = np.sort(g)[::-1]
    css = np.cumsum(u) - budget
    rho = np.nonzero(u > css / np.arange(1, g.size + 1))[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(g - theta, 0.0) + floor


def num_solve(
    g: NetworkGraph,
    sessions: list[SessionSpec],
    alpha: float = 1.0,
    feas_tol: float = 1e-6,
    stat_tol: float = 1e-6,
    max_iters: int = 100_000,
) -> NumSolution:
    """Solve max sum_k log x_k s.t. link loads <= capacity, x_k <= demand,
    x_k = sum_j f_kj, f >= 0.

    Only alpha == 1 (proportional fairness) is supported; the log objective
    makes the program convex. Sessions with no positive demand are flagged
    degenerate and excluded.
    """
    if alpha != 1.0:
        raise SolverError("only alpha == 1 (log utility) is supported")
    K = len(sessions)
    cap = np.array([ln.capacity / MBPS for ln in g.links])
    if np.any(cap <= 0):
        raise SolverError("capacities must be positive")
    demand = np.array([s.demand_mean / MBPS for s in sessions])
    degenerate = demand <= 0.0

    # flat flow indexing over active sessions' paths
    idx_of: list[tuple[int, int]] = []       # flow index -> (session, path)
    session_slices: dict[int, slice] = {}
    for k, s in enumerate(sessions):
        if degenerate[k]:
            continue
        start = len(idx_of)
        idx_of.extend((k, j) for j in range(len(s.paths)))
        session_slices[k] = slice(start, len(idx_of))
    n_flows = len(idx_of)
    if n_flows == 0:
        flows = tuple(np.zeros(len(s.paths)) for s in sessions)
        diag = NumDiagnostics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, True)
        return NumSolution(np.zeros(K), flows, degenerate,
                           np.zeros(len(g.links)), 0.0, diag)

    A = np.zeros((len(g.links), n_flows))
    for i, (k, j) in enumerate(idx_of):
        for lid in sessions[k].paths[j].link_ids:
            A[lid, i] = 1.0

    floors = np.array([1e-9 * demand[k] / len(sessions[k].paths)
                       for k, _ in idx_of])

    def session_sums(f):
        return {k: float(f[sl].sum()) for k, sl in session_slices.items()}

    def objective(f):
        return sum(np.log(x) for x in session_sums(f).values())

    def grad_util(f):
        out = np.empty(n_flows)
        for k, sl in session_slices.items():
            out[sl] = 1.0 / f[sl].sum()
        return out

    def project(f):
        out = np.empty(n_flows)
        for k, sl in session_slices.items():
            out[sl] = _project_session(f[sl], demand[k], floors[sl][0])
        return out

    def al_value(f, mu, rho):
        y = np.maximum(0.0, mu + rho * (A @ f - cap))
        return objective(f) - (np.square(y).sum() - np.square(mu).sum()) / (2 * rho)

    def al_grad(f, mu, rho):
        y = np.maximum(0.0, mu + rho * (A @ f - cap))
        return grad_util(f) - A.T @ y

    def scaled_stationarity(f, mu, probe=1e-4):
        pg = (project(f + probe * (grad_util(f) - A.T @ mu)) - f) / probe
        xs = session_sums(f)
        return max(abs(pg[sl]).max() * xs[k] for k, sl in session_slices.items())

    f = project(np.array([demand[k] / len(sessions[k].paths) for k, _ in idx_of]))
    mu = np.zeros(len(g.links))
    rho = 1.0
    iters = 0
    prev_viol = np.inf
    converged = False

    for _ in range(400):
        # inner: projected gradient ascent on the augmented Lagrangian,
        # with Armijo backtracking
        val = al_value(f, mu, rho)
        step = 1.0
        for _ in range(4000):
            if iters >= max_iters:
                break
            iters += 1
            grad = al_grad(f, mu, rho)
            accepted = False
            while step > 1e-15:
                cand = project(f + step * grad)
                cval = al_value(cand, mu, rho)
                if cval >= val:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break  # no ascent step exists at float precision
            move = np.abs(cand - f).max()
            f, val = cand, cval
            step = min(step * 1.5, 1e4)
            if move <= 1e-13 * max(1.0, np.abs(f).max()):
                break
        load = A @ f
        viol = float(np.max((load - cap) / cap))
        mu = np.maximum(0.0, mu + rho * (load - cap))
        stat = scaled_stationarity(f, mu)
        if viol <= feas_tol and stat <= stat_tol:
            converged = True
            break
        if iters >= max_iters:
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * 2.0, 1e9)
        prev_viol = max(viol, 1e-300)

    # a non-converged iterate is rescaled into the feasible set; a converged
    # one already satisfies the capacity tolerance
    load = A @ f
    viol = float(np.max((load - cap) / cap))
    if not converged and viol > 0:
        f = f / (1.0 + viol + 1e-12)
        load = A @ f

    xs = session_sums(f)
    x_out = np.zeros(K)
    flows_out = []
    for k, s in enumerate(sessions):
        if degenerate[k]:
            flows_out.append(np.zeros(len(s.paths)))
        else:
            fk = f[session_slices[k]].copy()
            flows_out.append(fk * MBPS)
            x_out[k] = fk.sum() * MBPS

    # certificates
    stat = scaled_stationarity(f, mu)
    slack = cap - load
    comp = float(np.abs(mu * slack).max()) if mu.size else 0.0
    # weak-duality upper bound from the capacity multipliers
    path_cost = A.T @ mu
    dual = float(mu @ cap)
    for k, sl in session_slices.items():
        c = path_cost[sl].min()
        xstar = demand[k] if c <= 1.0 / demand[k] else 1.0 / c
        dual += np.log(xstar) - c * xstar
    primal = objective(f)
    demand_viol = max(
        (xs[k] - demand[k]) / demand[k] for k in session_slices) if xs else 0.0

    diag = NumDiagnostics(
        max_capacity_violation=float(np.max((load - cap) / cap)),
        max_demand_violation=float(max(demand_viol, 0.0)),
        flow_residual=0.0,  # x_k is defined as sum_j f_kj
        stationarity=float(stat),
        complementary_slackness=comp,
        duality_gap=float(dual - primal),
        iterations=iters,
        converged=converged,
    )
    return NumSolution(x_out, tuple(flows_out), degenerate,
                       mu / MBPS, primal, diag)


def num_action(sol: NumSolution) -> SplitAction:
    """Split ratios w = f / sum(f); degenerate sessions get a uniform split."""
    ratios = []
    for k, fk in enumerate(sol.flows):
        total = fk.sum()
        if sol.degenerate[k] or total <= 0:
            ratios.append(np.full(fk.size, 1.0 / fk.size))
        else:
            ratios.append(fk / total)
    return SplitAction(tuple(ratios))
