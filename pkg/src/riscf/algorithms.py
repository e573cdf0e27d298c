"""P-CCP phase updates, SCA precoding updates and the alternating outer loop."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model
from .config import AlgoOptions
from .conic import Tolerances, solve
from .subproblems import (ClusterAssignment, DesignIterate, Problem, bound_state,
                          build_phase_subproblem, build_precoding_subproblem, build_refine_phase,
                          build_refine_precoding, extract_phase, extract_precoding)

AO_TOL = 1e-6        # allowed objective decrease before the AO loop reverts
TRIM_MARGIN = 1e-7   # relative SINR headroom left below the rate targets


class InfeasibleStart(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class ConvergenceTrace:
    """Flat per-iteration record for every loop level."""

    rows: list = field(default_factory=list)

    FIELDS = ("stage", "ao_iter", "iter", "objective", "slack", "rho", "step", "status", "wall_s")

    def add(self, stage, ao_iter, it, objective, slack=0.0, rho=0.0, step=0.0, status="optimal",
            wall_s=0.0):
        self.rows.append(dict(stage=stage, ao_iter=int(ao_iter), iter=int(it),
                              objective=float(objective), slack=float(slack), rho=float(rho),
                              step=float(step), status=status, wall_s=float(wall_s)))

    def stage(self, name, ao_iter=None):
        return [r for r in self.rows
                if r["stage"] == name and (ao_iter is None or r["ao_iter"] == ao_iter)]

    def objectives(self, name, ao_iter=None):
        return np.array([r["objective"] for r in self.stage(name, ao_iter)])

    def dumps(self, timing=False):
        """Tab-separated text, one header line; wall time blanked unless ``timing``."""
        lines = ["\t".join(self.FIELDS)]
        for r in self.rows:
            vals = [r["stage"], str(r["ao_iter"]), str(r["iter"]), repr(r["objective"]),
                    repr(r["slack"]), repr(r["rho"]), repr(r["step"]), r["status"],
                    repr(r["wall_s"]) if timing else ""]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        out = cls()
        lines = text.strip("\n").split("\n")
        if lines[0].split("\t") != list(cls.FIELDS):
            raise ValueError("not a convergence trace")
        for ln in lines[1:]:
            s = ln.split("\t")
            out.add(s[0], int(s[1]), int(s[2]), float(s[3]), float(s[4]), float(s[5]), float(s[6]),
                    s[7], float(s[8]) if s[8] else 0.0)
        return out


@dataclass
class DesignSolution:
    W: np.ndarray
    v: np.ndarray
    rate_target: np.ndarray     # per-user rate the design commits to (bits/s/Hz)
    clusters: ClusterAssignment
    objective: float            # sum of rate_target
    ao_iters: int
    trace: ConvergenceTrace
    status: str = "converged"   # converged | max_iter | reverted | solver_warning

    @property
    def sinr_target(self):
        return (2.0 ** self.rate_target - 1.0) * (1.0 - TRIM_MARGIN)


# initialization --------------------------------------------------------------

def random_phases(rng, n):
    return np.exp(2j * np.pi * rng.random(n))


def matched_filter(problem, v):
    """Per-AP matched filter on the estimated effective channel, equal power split."""
    N, K, Nt = problem.n_aps, problem.n_users, problem.antennas_per_ap
    H = problem.effective(v).reshape(K, N, Nt).transpose(1, 0, 2)   # (N, K, Nt)
    W = np.zeros((N, K, Nt), complex)
    for n in range(N):
        ks = np.flatnonzero(problem.allowed[n])
        if ks.size == 0:
            continue
        norms = np.linalg.norm(H[n, ks], axis=1)
        scale = np.where(norms > 0, math.sqrt(problem.power[n] / ks.size) / np.where(norms > 0, norms, 1), 0)
        W[n, ks] = H[n, ks] * scale[:, None]
    return W


def state_from(problem, W, v, options, clusters=None, with_backhaul=True):
    """Feasible :class:`DesignIterate` for the given precoders and phases.

    Precoders outside the allowed/cluster mask and users whose signal cannot
    beat the error ball are zeroed; backhaul loads above the limit are fixed by
    shrinking every rate by one common factor.
    """
    mask = problem.allowed.copy()
    if clusters is not None:
        mask &= clusters.to_mask(problem.n_users)
    W = W * mask[:, :, None]
    Wk = model.stacked(W)
    raw = np.abs(np.einsum("kj,kj->k", problem.effective(v).conj(), Wk)) - problem.eps * np.linalg.norm(Wk, axis=1)
    W[:, raw <= 0, :] = 0.0
    alpha, _, beta, gamma = bound_state(problem, W, v)
    rate = np.log2(1.0 + gamma)
    a = np.zeros((problem.n_aps, problem.n_users))
    f, _ = model.l0_smooth(np.sum(np.abs(W) ** 2, axis=2), options.varpi)
    a[mask] = f[mask]
    finite = np.isfinite(problem.cap)
    if with_backhaul and finite.any():
        if clusters is None:
            load = a @ rate
        else:
            load = clusters.to_mask(problem.n_users).astype(float) @ rate
        ratio = np.where(load[finite] > 0, problem.cap[finite] / np.maximum(load[finite], 1e-300), np.inf)
        scale = min(1.0, float(ratio.min()) * (1.0 - 1e-9))
        if scale < 1.0:
            rate = rate * scale
            gamma = 2.0 ** rate - 1.0
    return DesignIterate(W=W, v=np.array(v, complex), gamma=gamma, alpha=alpha, beta=beta,
                         rate=rate, a=a, b=rate.copy())


def initialize(problem, rng, options=None, v=None):
    """Random unit-modulus phases and per-AP matched-filter precoders at full power."""
    options = options or AlgoOptions()
    v = random_phases(rng, problem.n_elements) if v is None else np.asarray(v, complex)
    W = matched_filter(problem, v)
    return state_from(problem, W, v, options)


def determine_clusters(W, mu_th):
    """``S_n = {k : ||w_nk||^2 >= mu_th}``."""
    if mu_th <= 0:
        raise ValueError("mu_th must be positive")
    return ClusterAssignment.from_mask(np.sum(np.abs(W) ** 2, axis=2) >= mu_th)


def bound_sum_rate(problem, W, v):
    _, _, _, gamma = bound_state(problem, W, v)
    return float(np.sum(np.log2(1.0 + gamma)))


# P-CCP -----------------------------------------------------------------------

@dataclass
class PhaseOutcome:
    iterate: DesignIterate
    iterations: int
    converged: bool
    final_slack: float
    rate_before_projection: float
    rate_after_projection: float
    status: str


def pccp_phase(problem, iterate, options, trace=None, ao_iter=0, clusters=None, tolerances=None):
    """Penalized CCP over the phases with the precoders held fixed."""
    trace = trace if trace is not None else ConvergenceTrace()
    stage = "pccp" if clusters is None else "refine-pccp"
    rho = options.rho0
    cur = iterate
    converged, status, it = False, "optimal", 0
    for it in range(1, options.max_pccp + 1):
        t0 = time.perf_counter()
        if clusters is None:
            prog = build_phase_subproblem(problem, cur, rho, options)
        else:
            prog = build_refine_phase(problem, cur, clusters, rho, options)
        res = solve(prog, tolerances)
        if not res.ok:
            status = res.status
            warnings.warn(f"phase subproblem ended with {res.status}; keeping last iterate",
                          RuntimeWarning, stacklevel=2)
            trace.add(stage, ao_iter, it, float("nan"), rho=rho, status=res.status,
                      wall_s=time.perf_counter() - t0)
            break
        new = extract_phase(res, cur)
        step = float(np.linalg.norm(new.v - cur.v))
        slack = new.slack_sum
        trace.add(stage, ao_iter, it, res.objective, slack, rho, step, res.status,
                  time.perf_counter() - t0)
        if res.status != "optimal":
            status = res.status
        cur = new
        if slack <= options.phi1 and step <= options.phi2:
            converged = True
            break
        rho = min(options.mu * rho, options.rho_max)
    before = bound_sum_rate(problem, cur.W, cur.v)
    mod = np.abs(cur.v)
    v = np.where(mod > 0, cur.v / np.where(mod > 0, mod, 1.0), 1.0)
    after = bound_sum_rate(problem, cur.W, v)
    out = cur.copy()
    out.v = v
    out.pccp_iters = it
    return PhaseOutcome(out, it, converged, cur.slack_sum, before, after, status)


# SCA -------------------------------------------------------------------------

@dataclass
class PrecodingOutcome:
    iterate: DesignIterate
    iterations: int
    objectives: np.ndarray   # start value followed by one entry per solve
    converged: bool
    status: str


def sca_precoding(problem, iterate, options, trace=None, ao_iter=0, clusters=None, tolerances=None,
                  prepared=False):
    """SCA over the precoders with the phases held fixed.

    Unless ``prepared`` the start point is rebuilt from ``(W, v)`` so that it
    is feasible for the first convex restriction.
    """
    trace = trace if trace is not None else ConvergenceTrace()
    stage = "sca" if clusters is None else "refine-sca"
    cur = iterate if prepared else state_from(problem, iterate.W, iterate.v, options, clusters)
    obj = float(np.sum(cur.rate))
    history = [obj]
    trace.add(stage, ao_iter, 0, obj)
    converged, status, it = False, "optimal", 0
    for it in range(1, options.max_sca + 1):
        t0 = time.perf_counter()
        if clusters is None:
            prog = build_precoding_subproblem(problem, cur, options)
        else:
            prog = build_refine_precoding(problem, cur, clusters, options)
        res = solve(prog, tolerances)
        if not res.ok:
            trace.add(stage, ao_iter, it, float("nan"), status=res.status,
                      wall_s=time.perf_counter() - t0)
            if it == 1 and res.status == "primal_infeasible":
                raise InfeasibleStart("precoding restriction infeasible at its own start point", trace)
            status = res.status
            warnings.warn(f"precoding subproblem ended with {res.status}; keeping last iterate",
                          RuntimeWarning, stacklevel=2)
            break
        if res.status != "optimal":
            status = res.status
        cur = extract_precoding(res, cur)
        new_obj = float(res.objective)
        history.append(new_obj)
        trace.add(stage, ao_iter, it, new_obj, status=res.status, wall_s=time.perf_counter() - t0)
        if abs(new_obj - obj) <= options.eps * max(abs(new_obj), 1e-12):
            converged = True
            break
        obj = new_obj
    cur.sca_iters = it
    return PrecodingOutcome(cur, it, np.array(history), converged, status)


# rate matching ---------------------------------------------------------------

def trim_to_targets(problem, W, v, targets, max_iter=10_000, tol=1e-12):
    """Scale user precoders down until each worst-case SINR bound meets its target.

    Standard fixed-point power control on per-user scale factors starting
    from 1; the iterates decrease monotonically and every SINR stays above
    its target. Users with a zero target are switched off.
    """
    targets = np.asarray(targets, float)
    Wk = model.stacked(W)
    K = Wk.shape[0]
    H = problem.effective(v)
    sig = np.maximum(np.abs(np.einsum("kj,kj->k", H.conj(), Wk))
                     - problem.eps * np.linalg.norm(Wk, axis=1), 0.0) ** 2
    G = np.abs(H.conj() @ Wk.T) ** 2
    nrm = np.sum(np.abs(Wk) ** 2, axis=1)
    p = np.where(targets > 0, 1.0, 0.0)
    off = ~np.eye(K, dtype=bool)

    def interference(p):
        return (np.sqrt((G * off) @ p) + problem.eps * np.sqrt(off @ (p * nrm))) ** 2 + 1.0

    for _ in range(max_iter):
        need = np.where(sig > 0, targets * interference(p) / np.where(sig > 0, sig, 1.0), 0.0)
        new = np.minimum(p, need)
        if np.max(np.abs(new - p)) <= tol * max(1.0, float(p.max(initial=0.0))):
            p = new
            break
        p = new
    scale = np.sqrt(p)
    W = W * scale[None, :, None]
    return W, p


# outer loop ------------------------------------------------------------------

def _objective(it):
    return float(np.sum(it.rate))


def ao_solve(problem, options, rng, init=None, optimize_phase=True, refine=True, tolerances=None):
    """Alternate phase and precoding updates, then refine on fixed clusters."""
    trace = ConvergenceTrace()
    it = init if init is not None else initialize(problem, rng, options)
    best, prev = None, None
    status = "max_iter"
    ao = 0
    for ao in range(1, options.max_ao + 1):
        cur = it
        if optimize_phase:
            cur = pccp_phase(problem, cur, options, trace, ao, tolerances=tolerances).iterate
        try:
            pre = sca_precoding(problem, cur, options, trace, ao, tolerances=tolerances)
        except InfeasibleStart:
            warnings.warn("precoding start infeasible; stopping outer loop", RuntimeWarning, stacklevel=2)
            status = "solver_warning"
            break
        new = pre.iterate
        new.ao_iters = ao
        obj = _objective(new)
        trace.add("ao", ao, ao, obj, status=pre.status)
        if prev is not None and obj < prev - AO_TOL * max(1.0, abs(prev)):
            status = "reverted"
            break
        best, it = new, new
        if prev is not None and abs(obj - prev) <= options.eps * max(abs(obj), 1e-12):
            status = "converged"
            break
        prev = obj
    if best is None:
        best = state_from(problem, it.W, it.v, options)
    clusters = determine_clusters(best.W, options.mu_th)
    final = best
    if refine:
        cur = best
        if optimize_phase:
            cur = pccp_phase(problem, cur, options, trace, ao + 1, clusters, tolerances).iterate
        try:
            final = sca_precoding(problem, cur, options, trace, ao + 1, clusters, tolerances).iterate
        except InfeasibleStart:
            warnings.warn("refinement start infeasible; keeping unrefined design", RuntimeWarning,
                          stacklevel=2)
            final = state_from(problem, best.W, best.v, options, clusters)
            status = "solver_warning"
    return finalize(problem, final, clusters, options, trace, ao, status)


def finalize(problem, it, clusters, options, trace, ao_iters, status):
    """Project, mask, and trim so the committed rates are deliverable and backhaul-feasible."""
    mod = np.abs(it.v)
    v = np.where(mod > 0, it.v / np.where(mod > 0, mod, 1.0), 1.0)
    mask = problem.allowed & clusters.to_mask(problem.n_users)
    W = it.W * mask[:, :, None]
    # never exceed the per-AP budget because of solver round-off
    pw = model.per_ap_power(W)
    over = pw > problem.power
    if np.any(over):
        W[over] *= np.sqrt(problem.power[over] / pw[over])[:, None, None]
    _, _, _, gamma = bound_state(problem, W, v)
    rates = np.log2(1.0 + gamma)
    targets = np.minimum(np.maximum(it.rate, 0.0), rates)
    active = np.sum(np.abs(W) ** 2, axis=2) > 0
    for n in range(problem.n_aps):
        cap = problem.cap[n]
        load = float(targets[active[n]].sum())
        if np.isfinite(cap) and load > cap:
            targets[active[n]] *= cap / load
    targets = np.maximum(targets * (1.0 - 1e-12), 0.0)
    gamma_t = (2.0 ** targets - 1.0) * (1.0 - TRIM_MARGIN)
    W, _ = trim_to_targets(problem, W, v, gamma_t)
    return DesignSolution(W=W, v=v, rate_target=targets, clusters=clusters,
                          objective=float(targets.sum()), ao_iters=ao_iters, trace=trace,
                          status=status)


# independent audit -----------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    power_ok: bool
    modulus_ok: bool
    backhaul_ok: bool
    sinr_ok: bool
    max_power_excess: float
    max_modulus_error: float
    max_backhaul_excess: float
    min_sinr_ratio: float

    @property
    def ok(self):
        return self.power_ok and self.modulus_ok and self.backhaul_ok and self.sinr_ok


def audit(W, v, sinr_target, design_csi, true_csi, power, cap, power_tol=1e-6, modulus_tol=1e-12,
          sinr_rel_tol=1e-6):
    """Check a design using only model-level evaluations.

    Backhaul loads use the exact serving indicator ``||w_nk||^2 > 0`` and the
    worst-case rates under ``true_csi``; the SINR targets are checked against
    the radii the design was built for (``design_csi``).
    """
    N = W.shape[0]
    power = np.broadcast_to(np.asarray(power, float), (N,))
    cap = np.broadcast_to(np.asarray(cap, float), (N,))
    excess = model.per_ap_power(W) - power
    mod_err = float(np.max(np.abs(np.abs(v) - 1.0))) if len(v) else 0.0
    rates, _ = model.worst_case_sum_rate(W, v, true_csi)
    serving = np.sum(np.abs(W) ** 2, axis=2) > 0
    loads = serving.astype(float) @ rates
    finite = np.isfinite(cap)
    bh_excess = float(np.max(loads[finite] - cap[finite], initial=-np.inf))
    sinr = model.worst_case_sinr(W, v, design_csi)
    tgt = np.asarray(sinr_target, float)
    ratio = np.where(tgt > 0, sinr / np.where(tgt > 0, tgt, 1.0), np.inf)
    min_ratio = float(ratio.min()) if ratio.size else np.inf
    return AuditReport(
        power_ok=bool(np.all(excess <= power_tol)),
        modulus_ok=mod_err <= modulus_tol,
        backhaul_ok=bool(bh_excess <= 1e-9 * max(1.0, float(np.max(cap[finite], initial=1.0)))),
        sinr_ok=bool(min_ratio >= 1.0 - sinr_rel_tol),
        max_power_excess=float(excess.max()),
        max_modulus_error=mod_err,
        max_backhaul_excess=bh_excess,
        min_sinr_ratio=min_ratio,
    )
