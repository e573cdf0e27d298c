"""Convex restrictions of the phase-shift and precoding subproblems.

Every builder returns a :class:`~riscf.conic.ConicProgram` whose feasible
points are feasible for the corresponding nonconvex constraint set, and whose
surrogates touch the original constraints at the linearization point held in
the :class:`DesignIterate`.

Internally channels and radii of user ``k`` are divided by ``sigma_k`` so the
noise power is one; precoders stay in physical units (sqrt(W)). The slack
variables ``alpha``/``beta`` of an iterate are in those normalized units,
``gamma`` is a plain SINR and ``rate`` is in bits/s/Hz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .conic import Affine, ComplexAffine, ProgramBuilder

LN2 = math.log(2.0)
DEGENERATE_SIGNAL = 1e-12


@dataclass(frozen=True)
class Problem:
    """Noise-normalized design data for one instance."""

    hd: np.ndarray        # (K, N*Nt)   estimated direct channels / sigma_k
    Z: np.ndarray         # (K, ML, N*Nt) estimated cascaded channels / sigma_k
    eps: np.ndarray       # (K,)        aggregated radius eps_k / sigma_k
    eps_d: np.ndarray     # (K,)
    eps_c: np.ndarray     # (K,)
    power: np.ndarray     # (N,)        per-AP power budget, watts
    cap: np.ndarray       # (N,)        backhaul limit, bits/s/Hz (inf = none)
    n_aps: int
    allowed: np.ndarray   # (N, K)      precoders that may be nonzero

    @classmethod
    def from_csi(cls, csi, power, cap, allowed=None):
        N, K, Nt = csi.direct_hat.shape
        sigma = np.sqrt(np.asarray(csi.noise_power, float))
        hd = csi.stacked_direct() / sigma[:, None]
        Z = csi.stacked_cascaded() / sigma[:, None, None]
        allowed = np.ones((N, K), bool) if allowed is None else np.asarray(allowed, bool)
        return cls(hd, Z, csi.eps / sigma, csi.eps_d / sigma, csi.eps_c / sigma,
                   np.broadcast_to(np.asarray(power, float), (N,)).copy(),
                   np.broadcast_to(np.asarray(cap, float), (N,)).copy(), N, allowed)

    @property
    def n_users(self):
        return self.hd.shape[0]

    @property
    def n_elements(self):
        return self.Z.shape[1]

    @property
    def antennas_per_ap(self):
        return self.hd.shape[1] // self.n_aps

    @property
    def has_backhaul(self):
        return bool(np.any(np.isfinite(self.cap)))

    def effective(self, v):
        return self.hd + np.einsum("kmj,m->kj", self.Z.conj(), v)


@dataclass
class DesignIterate:
    W: np.ndarray          # (N, K, Nt)
    v: np.ndarray          # (ML,)
    gamma: np.ndarray      # (K,)
    alpha: np.ndarray      # (K,)
    beta: np.ndarray       # (K,)
    rate: np.ndarray       # (K,) epigraph of log2(1 + gamma)
    a: np.ndarray          # (N, K)
    b: np.ndarray          # (K,)
    c1: np.ndarray = None  # (N,)
    c2: np.ndarray = None  # (K,)
    c3: np.ndarray = None  # (ML,)
    pccp_iters: int = 0
    sca_iters: int = 0
    ao_iters: int = 0

    def __post_init__(self):
        N, K, _ = self.W.shape
        if self.c1 is None:
            self.c1 = np.zeros(N)
        if self.c2 is None:
            self.c2 = np.zeros(K)
        if self.c3 is None:
            self.c3 = np.zeros(self.v.shape[0])

    def validate(self):
        for name in ("gamma", "alpha", "a", "b", "c1", "c2", "c3"):
            if np.any(np.asarray(getattr(self, name)) < -1e-9):
                raise ValueError(f"iterate has negative {name}")
        if np.any(self.beta <= 1.0 - 1e-9):
            raise ValueError("iterate needs beta > noise power (normalized to 1)")
        return self

    def copy(self, **kw):
        out = replace(self, **{k: np.array(getattr(self, k), copy=True) for k in
                               ("W", "v", "gamma", "alpha", "beta", "rate", "a", "b", "c1", "c2", "c3")})
        for k, val in kw.items():
            setattr(out, k, val)
        return out

    @property
    def slack_sum(self):
        return float(np.sum(self.c1) + np.sum(self.c2) + np.sum(self.c3))


@dataclass(frozen=True)
class ClusterAssignment:
    served: tuple  # served[n] = frozenset of user indices

    @property
    def mask(self):
        return self.to_mask(max((max(s) for s in self.served if s), default=-1) + 1)

    def to_mask(self, n_users):
        m = np.zeros((len(self.served), n_users), bool)
        for n, s in enumerate(self.served):
            m[n, list(s)] = True
        return m

    @classmethod
    def from_mask(cls, mask):
        return cls(tuple(frozenset(np.flatnonzero(row).tolist()) for row in np.asarray(mask, bool)))


def linearize_quad_over_lin(alpha_t, beta_t):
    """Tangent minorant ``c_a * alpha + c_b * beta`` of ``alpha^2 / beta`` at ``(alpha_t, beta_t)``."""
    if beta_t <= 0:
        raise ValueError("beta_t must be positive")
    if alpha_t < 0:
        raise ValueError("alpha_t must be nonnegative")
    r = alpha_t / beta_t
    return 2.0 * r, -r * r


def log_tangent(gamma_t):
    """Zeroth and first order terms of ``log2(1 + gamma)`` at ``gamma_t``."""
    gamma_t = np.asarray(gamma_t, float)
    return np.log2(1.0 + gamma_t), 1.0 / ((1.0 + gamma_t) * LN2)


def bound_state(problem, W, v):
    """Worst-case bound quantities of a design in normalized units.

    Returns ``(alpha, s, beta, gamma)``: worst-case signal, interference bound,
    ``s^2 + 1`` and the SINR bound.
    """
    Wk = model.stacked(W)
    H = problem.effective(v)
    K = Wk.shape[0]
    alpha = np.maximum(np.abs(np.einsum("kj,kj->k", H.conj(), Wk))
                       - problem.eps * np.linalg.norm(Wk, axis=1), 0.0)
    G = H.conj() @ Wk.T
    norms2 = np.sum(np.abs(Wk) ** 2, axis=1)
    s = np.empty(K)
    for k in range(K):
        o = np.arange(K) != k
        s[k] = np.linalg.norm(G[k, o]) + problem.eps[k] * np.sqrt(norms2[o].sum())
    beta = s ** 2 + 1.0
    return alpha, s, beta, alpha ** 2 / beta


def _signal_phase(value):
    if abs(value) < DEGENERATE_SIGNAL:
        return None
    return value / abs(value)


def _common(bld, problem, it, K):
    """Variables and constraints shared by all four programs."""
    gamma = bld.var("gamma", K)
    alpha = bld.var("alpha", K)
    beta = bld.var("beta", K)
    s = bld.var("s", K)
    t = bld.var("rate", K)
    bld.nonneg(Affine.select(gamma), "gamma>=0")
    bld.nonneg(Affine.select(alpha), "alpha>=0")
    for k in range(K):
        # s_k^2 + 1 <= beta_k
        bld.rsoc(Affine.select([beta[k]]), Affine.constant(1.0),
                 Affine.vstack([Affine.select([s[k]]), Affine.constant(1.0)]), f"beta-floor[{k}]")
        # tangent minorant of alpha^2/beta >= gamma
        ca, cb = linearize_quad_over_lin(max(float(it.alpha[k]), 0.0), float(it.beta[k]))
        bld.nonneg(Affine.select([alpha[k]], ca) + Affine.select([beta[k]], cb)
                   - Affine.select([gamma[k]]), f"sinr-cut[{k}]")
        # rate_k <= log2(1 + gamma_k)
        bld.exp(Affine.select([t[k]], LN2), Affine.constant(1.0),
                Affine.select([gamma[k]]) + 1.0, f"rate[{k}]")
    return gamma, alpha, beta, s, t


def _backhaul_rate_cut(bld, problem, t, clusters):
    """Exact linear backhaul rows on the rate epigraph over fixed clusters."""
    for n, served in enumerate(clusters.served):
        if not np.isfinite(problem.cap[n]) or not served:
            continue
        ks = sorted(served)
        bld.nonneg(problem.cap[n] - Affine.select(t[ks]).sum(), f"cluster-load[{n}]")


# phase-shift programs -------------------------------------------------------

def _phase_program(problem, it, rho, options, clusters):
    it.validate()
    K, ML = problem.n_users, problem.n_elements
    N = problem.n_aps
    Wk = model.stacked(it.W)
    bld = ProgramBuilder()
    v = bld.var("v", ML, complex=True)
    gamma, alpha, beta, s, t = _common(bld, problem, it, K)
    c2 = bld.var("c2", K)
    c3 = bld.var("c3", ML)
    bld.nonneg(Affine.select(c2), "c2>=0")
    bld.nonneg(Affine.select(c3), "c3>=0")

    A = np.einsum("kj,ij->ki", problem.hd.conj(), Wk)        # h_dk^H w_i
    B = np.einsum("kmj,ij->kim", problem.Z, Wk)              # Z_k w_i
    w_norm = np.linalg.norm(Wk, axis=1)
    H_t = problem.effective(it.v)
    for k in range(K):
        # s_ki(v) = A[k,i] + v^H B[k,i]
        sig = ComplexAffine.linear(v, conj_mat=B[k, k][None, :], const=A[k, k])
        u = _signal_phase(np.vdot(H_t[k], Wk[k]))
        if u is None:
            if w_norm[k] > 0:
                warnings.warn(f"degenerate signal for user {k}; using zero reference phase",
                              RuntimeWarning, stacklevel=3)
            u = 1.0
        lin = sig.scale(np.conj(u)).real
        bld.nonneg(lin - problem.eps[k] * w_norm[k] - Affine.select([alpha[k]])
                   + Affine.select([c2[k]]), f"signal[{k}]")
        if K > 1:
            others = [i for i in range(K) if i != k]
            interf = ComplexAffine.linear(v, conj_mat=B[k, others], const=A[k, others])
            const = problem.eps[k] * np.sqrt(np.sum(w_norm[others] ** 2))
            bld.soc(Affine.select([s[k]]) - const, interf, f"interference[{k}]")

    if clusters is None:
        c1 = bld.var("c1", N)
        bld.nonneg(Affine.select(c1), "c1>=0")
        f, _ = model.l0_smooth(np.sum(np.abs(it.W) ** 2, axis=2), options.varpi)   # (N, K)
        L0, g = log_tangent(it.gamma)
        for n in range(N):
            if not np.isfinite(problem.cap[n]):
                continue
            # sum_k f_nk [log2(1+g_t) + (gamma - g_t)/((1+g_t) ln2)] <= cap + c1
            coeff = f[n] * g
            const = float(np.sum(f[n] * (L0 - g * it.gamma)))
            bld.nonneg(problem.cap[n] - const + Affine.select([c1[n]])
                       - Affine.linear(coeff[None, :], gamma), f"load[{n}]")
        penalty_idx = np.concatenate([c1, c2, c3])
    else:
        _backhaul_rate_cut(bld, problem, t, clusters)
        penalty_idx = np.concatenate([c2, c3])

    # |v_m|^2 <= 1 + c3_m
    for m in range(ML):
        bld.rsoc(Affine.select([c3[m]]) + 1.0, Affine.constant(1.0),
                 ComplexAffine.linear(v[m:m + 1], mat=np.ones((1, 1))), f"modulus[{m}]")
    # 2 Re{conj(v_t) v} - |v_t|^2 >= 1 - c3
    vt = it.v
    lin12 = ComplexAffine.linear(v, mat=np.diag(np.conj(vt))).real * 2.0
    bld.nonneg(lin12 - np.abs(vt) ** 2 - 1.0 + Affine.select(c3), "modulus-cut")

    bld.maximize(Affine.select(t).sum() - Affine.select(penalty_idx, rho).sum())
    return bld.build()


def build_phase_subproblem(problem, iterate, rho, options):
    """Penalized convex program for the RIS phases with the precoders fixed."""
    if np.any(np.asarray(iterate.gamma) < 0):
        raise ValueError("gamma^(t) must be nonnegative")
    if rho <= 0:
        raise ValueError("penalty must be positive")
    return _phase_program(problem, iterate, rho, options, None)


def build_refine_phase(problem, iterate, clusters, rho, options=None):
    """Phase program with the exact per-cluster backhaul rows replacing the smoothed ones."""
    if rho <= 0:
        raise ValueError("penalty must be positive")
    return _phase_program(problem, iterate, rho, options, clusters)


# precoding programs ---------------------------------------------------------

def _precoding_program(problem, it, options, clusters):
    it.validate()
    K, N = problem.n_users, problem.n_aps
    Nt = problem.antennas_per_ap
    allowed = problem.allowed.copy()
    if clusters is not None:
        allowed &= clusters.to_mask(K)
    bld = ProgramBuilder()
    widx = {}
    for n in range(N):
        for k in range(K):
            if allowed[n, k]:
                widx[n, k] = bld.var(f"w[{n},{k}]", Nt, complex=True)
    gamma, alpha, beta, s, t = _common(bld, problem, it, K)
    H = problem.effective(it.v)                    # (K, N*Nt)
    Wk_t = model.stacked(it.W)

    def user_blocks(j):
        aps = [n for n in range(N) if allowed[n, j]]
        if not aps:
            return None, None
        idx = np.concatenate([widx[n, j] for n in aps])
        sel = np.concatenate([np.arange(n * Nt, (n + 1) * Nt) for n in aps])
        return idx, sel

    blocks = [user_blocks(j) for j in range(K)]

    def inner(k, j):
        """h_k^H w_j as a complex affine expression (None if w_j is identically zero)."""
        idx, sel = blocks[j]
        if idx is None:
            return None
        return ComplexAffine.linear(idx, mat=H[k, sel].conj()[None, :])

    # per-AP power
    for n in range(N):
        ks = [k for k in range(K) if allowed[n, k]]
        if ks:
            bld.soc(Affine.constant(math.sqrt(problem.power[n])),
                    Affine.select(np.concatenate([widx[n, k].ravel() for k in ks])), f"power[{n}]")

    omega = bld.var("omega", K)
    for k in range(K):
        idx, _ = blocks[k]
        if idx is None:
            bld.nonneg(-Affine.select([alpha[k]]), f"signal[{k}]")
            continue
        bld.soc(Affine.select([omega[k]]), Affine.select(idx.ravel()), f"norm-w[{k}]")
        u = _signal_phase(np.vdot(H[k], Wk_t[k]))
        if u is None:
            if np.linalg.norm(Wk_t[k]) > 0:
                warnings.warn(f"degenerate signal for user {k}; using matched-filter phase",
                              RuntimeWarning, stacklevel=3)
            u = 1.0
        lin = inner(k, k).scale(np.conj(u)).real
        bld.nonneg(lin - Affine.select([omega[k]], problem.eps[k]) - Affine.select([alpha[k]]),
                   f"signal[{k}]")

    if K > 1:
        q = bld.var("q", K)
        r = bld.var("r", K)
        for k in range(K):
            terms = [inner(k, j) for j in range(K) if j != k]
            terms = [e for e in terms if e is not None]
            others = [blocks[j][0] for j in range(K) if j != k and blocks[j][0] is not None]
            if terms:
                bld.soc(Affine.select([q[k]]), ComplexAffine.vstack(terms), f"leakage[{k}]")
                bld.soc(Affine.select([r[k]]), Affine.select(np.concatenate([o.ravel() for o in others])),
                        f"spread[{k}]")
            else:
                bld.nonneg(Affine.select([q[k]]), f"leakage[{k}]")
                bld.nonneg(Affine.select([r[k]]), f"spread[{k}]")
            bld.nonneg(Affine.select([s[k]]) - Affine.select([q[k]])
                       - Affine.select([r[k]], problem.eps[k]), f"interference[{k}]")

    if clusters is None and problem.has_backhaul:
        aidx = -np.ones((N, K), dtype=np.int64)
        for n in range(N):
            for k in range(K):
                if allowed[n, k]:
                    aidx[n, k] = bld.var(f"a[{n},{k}]", 1)[0]
        b = bld.var("b", K)
        bld.nonneg(Affine.select(aidx[aidx >= 0]), "a>=0")
        bld.nonneg(Affine.select(b), "b>=0")
        p_t = np.sum(np.abs(it.W) ** 2, axis=2)
        f_t, df_t = model.l0_smooth(p_t, options.varpi)
        L0, g = log_tangent(it.gamma)
        for n in range(N):
            for k in range(K):
                if not allowed[n, k]:
                    continue
                # f(p_t) + f'(p_t)(||w||^2 - p_t) <= a  <=>  ||w||^2 <= (a - f + f' p_t) / f'
                u = (Affine.select([aidx[n, k]]) - f_t[n, k] + df_t[n, k] * p_t[n, k]) * (1.0 / df_t[n, k])
                bld.rsoc(u, Affine.constant(1.0), Affine.select(widx[n, k].ravel()), f"indicator[{n},{k}]")
        for n in range(N):
            ks = [k for k in range(K) if allowed[n, k]]
            if not ks or not np.isfinite(problem.cap[n]):
                continue
            d_t = np.array([it.a[n, k] - it.b[k] for k in ks])
            a_n = Affine.select(aidx[n, ks])
            b_n = Affine.select(b[ks])
            rhs = (4.0 * problem.cap[n] - float(np.sum(d_t ** 2))
                   + ((a_n - b_n) * (2.0 * d_t)).sum())
            bld.rsoc(rhs, Affine.constant(1.0), a_n + b_n, f"load-dc[{n}]")
        for k in range(K):
            bld.nonneg(Affine.select([b[k]]) - L0[k] + g[k] * it.gamma[k]
                       - Affine.select([gamma[k]], g[k]), f"log-rate[{k}]")
    elif clusters is not None:
        _backhaul_rate_cut(bld, problem, t, clusters)

    bld.maximize(Affine.select(t).sum())
    return bld.build()


def build_precoding_subproblem(problem, iterate, options):
    """SCA program for the precoders with the phases fixed."""
    return _precoding_program(problem, iterate, options, None)


def build_refine_precoding(problem, iterate, clusters, options=None):
    """Precoding program over fixed clusters; precoders outside a cluster are eliminated."""
    return _precoding_program(problem, iterate, options, clusters)


# extraction -----------------------------------------------------------------

def extract_phase(result, it):
    out = it.copy()
    out.v = result.value("v")
    for name in ("gamma", "alpha", "beta", "rate", "c2", "c3"):
        setattr(out, name, np.asarray(result.value(name), float).copy())
    out.gamma = np.maximum(out.gamma, 0.0)
    out.alpha = np.maximum(out.alpha, 0.0)
    out.c2 = np.maximum(out.c2, 0.0)
    out.c3 = np.maximum(out.c3, 0.0)
    out.c1 = np.maximum(result.value("c1"), 0.0) if "c1" in result.variables else np.zeros_like(it.c1)
    out.beta = np.maximum(out.beta, 1.0)
    return out


def extract_precoding(result, it):
    out = it.copy()
    N, K, Nt = it.W.shape
    W = np.zeros((N, K, Nt), complex)
    for n in range(N):
        for k in range(K):
            name = f"w[{n},{k}]"
            if name in result.variables:
                W[n, k] = result.value(name)
    out.W = W
    for name in ("gamma", "alpha", "beta", "rate"):
        setattr(out, name, np.asarray(result.value(name), float).copy())
    out.gamma = np.maximum(out.gamma, 0.0)
    out.alpha = np.maximum(out.alpha, 0.0)
    out.beta = np.maximum(out.beta, 1.0)
    if "b" in result.variables:
        out.b = np.maximum(result.value("b"), 0.0)
        a = np.zeros((N, K))
        for n in range(N):
            for k in range(K):
                name = f"a[{n},{k}]"
                if name in result.variables:
                    a[n, k] = max(float(result.value(name)[0]), 0.0)
        out.a = a
    out.c1 = np.zeros(N)
    out.c2 = np.zeros(K)
    return out
