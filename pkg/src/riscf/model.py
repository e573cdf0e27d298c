"""Channel model, SINR/rate, the smoothed l0 indicator and worst-case bounds.

Array layout used throughout the package (N APs with Nt antennas, L RISs with
M elements, K users):

* direct channels        ``(N, K, Nt)``
* RIS-user channels      ``(L, K, M)``
* AP-RIS channels        ``(N, L, M, Nt)``
* cascaded channels      ``(N, K, M*L, Nt)``  -- blocks stacked over RIS index
* precoders ``W``        ``(N, K, Nt)``        -- ``W[n, k]`` is w_{n,k}
* phase vector ``v``     ``(M*L,)``

The user-stacked views concatenate over APs: ``h_{d,k}`` has length ``N*Nt``
and ``Z_k = [Z_{1,k}, ..., Z_{N,k}]`` is ``(M*L, N*Nt)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Dimensions:
    n_aps: int
    antennas_per_ap: int
    n_ris: int
    elements_per_ris: int
    n_users: int

    def __post_init__(self):
        for name in ("n_aps", "antennas_per_ap", "n_ris", "elements_per_ris", "n_users"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_elements(self):
        return self.elements_per_ris * self.n_ris

    @property
    def n_antennas(self):
        return self.n_aps * self.antennas_per_ap


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class ChannelSet:
    direct: np.ndarray       # (N, K, Nt)
    ris_user: np.ndarray     # (L, K, M)
    ap_ris: np.ndarray       # (N, L, M, Nt)
    noise_power: np.ndarray  # (K,) watts

    def __post_init__(self):
        N, K, Nt = self.direct.shape
        L, K2, M = self.ris_user.shape
        if K2 != K or self.ap_ris.shape != (N, L, M, Nt) or np.shape(self.noise_power) != (K,):
            raise ValueError("channel dimensions are inconsistent")
        for name in ("direct", "ris_user", "ap_ris", "noise_power"):
            _check_finite(name, getattr(self, name))
        if np.any(np.asarray(self.noise_power) <= 0):
            raise ValueError("noise power must be positive")

    @property
    def dims(self):
        N, K, Nt = self.direct.shape
        L, _, M = self.ris_user.shape
        return Dimensions(N, Nt, L, M, K)

    def cascaded(self):
        """``Z[n, k]`` of shape ``(M*L, Nt)``, block ``l`` is diag(conj(h_r,l,k)) G_{n,l}."""
        N, K, Nt = self.direct.shape
        L, _, M = self.ris_user.shape
        z = np.conj(self.ris_user)[None, :, :, :, None] * self.ap_ris[:, :, None, :, :]
        # (N, L, K, M, Nt) -> (N, K, L*M, Nt)
        return z.transpose(0, 2, 1, 3, 4).reshape(N, K, L * M, Nt)


@dataclass(frozen=True)
class CsiEstimate:
    """Channel estimates with per-link error radii (bounded error model)."""

    direct_hat: np.ndarray     # (N, K, Nt)
    cascaded_hat: np.ndarray   # (N, K, ML, Nt)
    eps_direct: np.ndarray     # (N, K)
    eps_cascaded: np.ndarray   # (N, K)
    noise_power: np.ndarray    # (K,)

    def __post_init__(self):
        N, K, Nt = self.direct_hat.shape
        if self.cascaded_hat.shape[:2] != (N, K) or self.cascaded_hat.shape[3] != Nt:
            raise ValueError("cascaded estimate shape does not match direct estimate")
        if np.shape(self.eps_direct) != (N, K) or np.shape(self.eps_cascaded) != (N, K):
            raise ValueError("radii must have shape (N, K)")
        if np.any(np.asarray(self.eps_direct) < 0) or np.any(np.asarray(self.eps_cascaded) < 0):
            raise ValueError("radii must be nonnegative")

    @classmethod
    def perfect(cls, channels):
        N, K, _ = channels.direct.shape
        return cls(channels.direct.copy(), channels.cascaded(), np.zeros((N, K)),
                   np.zeros((N, K)), np.asarray(channels.noise_power, float).copy())

    @property
    def n_elements(self):
        return self.cascaded_hat.shape[2]

    @property
    def eps_d(self):
        return np.sqrt(np.sum(np.asarray(self.eps_direct) ** 2, axis=0))

    @property
    def eps_c(self):
        return np.sqrt(np.sum(np.asarray(self.eps_cascaded) ** 2, axis=0))

    @property
    def eps(self):
        return self.eps_d + np.sqrt(self.n_elements) * self.eps_c

    def without_radii(self):
        return replace(self, eps_direct=np.zeros_like(self.eps_direct),
                       eps_cascaded=np.zeros_like(self.eps_cascaded))

    def stacked_direct(self):
        return stack_direct(self.direct_hat)

    def stacked_cascaded(self):
        return stack_cascaded(self.cascaded_hat)

    def effective(self, v):
        """Estimated effective channels ``h_k = h_{d,k} + Z_k^H v``, shape ``(K, N*Nt)``."""
        return effective_channels(self.direct_hat, self.cascaded_hat, v)


def stack_direct(direct):
    """``(N, K, Nt)`` -> ``(K, N*Nt)``."""
    N, K, Nt = direct.shape
    return direct.transpose(1, 0, 2).reshape(K, N * Nt)


def stack_cascaded(z):
    """``(N, K, ML, Nt)`` -> ``(K, ML, N*Nt)`` (horizontal concatenation over APs)."""
    N, K, ML, Nt = z.shape
    return z.transpose(1, 2, 0, 3).reshape(K, ML, N * Nt)


def stacked(W):
    """Per-AP precoders ``(N, K, Nt)`` -> stacked ``w_k`` rows ``(K, N*Nt)``."""
    return stack_direct(W)


def unstack(Wk, n_aps):
    """Inverse of :func:`stacked`."""
    K, NNt = Wk.shape
    return Wk.reshape(K, n_aps, NNt // n_aps).transpose(1, 0, 2)


def cascade_channel(h_r, G):
    """Cascaded channel ``diag(conj(h_r)) G`` of one AP-RIS-user link."""
    h_r = np.asarray(h_r)
    G = np.asarray(G)
    if h_r.ndim != 1 or G.ndim != 2 or G.shape[0] != h_r.shape[0]:
        raise ValueError(f"shape mismatch: h_r {h_r.shape}, G {G.shape}")
    return np.conj(h_r)[:, None] * G


def effective_channel(h_d, Z_k, v):
    """``h_d + Z_k^H v`` for one user (stacked over APs)."""
    h_d, Z_k, v = np.asarray(h_d), np.asarray(Z_k), np.asarray(v)
    if Z_k.shape != (v.shape[0], h_d.shape[0]):
        raise ValueError(f"shape mismatch: h_d {h_d.shape}, Z {Z_k.shape}, v {v.shape}")
    return h_d + Z_k.conj().T @ v


def effective_channels(direct, cascaded, v):
    """Effective channels of all users, ``(K, N*Nt)``."""
    hd = stack_direct(direct)
    Z = stack_cascaded(cascaded)
    return hd + np.einsum("kmj,m->kj", Z.conj(), v)


def true_effective_channels(channels, v):
    return effective_channels(channels.direct, channels.cascaded(), v)


def sinr_and_rate(k, effective, W, noise_power):
    """Exact SINR and rate (bits/s/Hz) of user ``k``.

    ``effective`` is ``(K, N*Nt)`` (row ``k`` is user ``k``'s channel) and ``W``
    either per-AP ``(N, K, Nt)`` or stacked ``(K, N*Nt)``.
    """
    Wk = stacked(W) if np.ndim(W) == 3 else np.asarray(W)
    g = np.abs(Wk @ effective[k].conj()) ** 2   # |h_k^H w_j|^2 for all j
    sigma2 = np.asarray(noise_power)[k] if np.ndim(noise_power) else noise_power
    sinr = g[k] / (g.sum() - g[k] + sigma2)
    return float(sinr), float(np.log2(1.0 + sinr))


def exact_rates(effective, W, noise_power):
    """Exact per-user rates for given effective channels."""
    K = effective.shape[0]
    return np.array([sinr_and_rate(k, effective, W, noise_power)[1] for k in range(K)])


def l0_smooth(x, varpi):
    """Arctangent surrogate of the l0 indicator and its derivative in ``x``.

    Returns ``(2/pi) atan(x / varpi)`` and ``2 varpi / (pi (varpi^2 + x^2))``.
    """
    if varpi <= 0:
        raise ValueError("varpi must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("l0_smooth is defined for nonnegative arguments")
    value = 2.0 / np.pi * np.arctan(x / varpi)
    grad = 2.0 * varpi / (np.pi * (varpi ** 2 + x ** 2))
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def worst_case_signal(h_hat, w, eps):
    """Closed-form minimum of ``|h^H w|`` over the aggregated error ball."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return max(abs(np.vdot(h_hat, w)) - eps * np.linalg.norm(w), 0.0)


def interference_upper_bound(h_hat, W_minus, eps_d, eps_c, M, L):
    """Upper bound on ``||h^H W_{-k}||`` over the aggregated error ball."""
    if eps_d < 0 or eps_c < 0:
        raise ValueError("radii must be nonnegative")
    W_minus = np.asarray(W_minus).reshape(len(h_hat), -1)
    if W_minus.shape[1] == 0:
        return 0.0
    eps = eps_d + np.sqrt(M * L) * eps_c
    return float(np.linalg.norm(h_hat.conj() @ W_minus) + eps * np.linalg.norm(W_minus))


def worst_case_perturbation(hd_hat, Z_hat, v, w, eps_d, eps_c):
    """Aggregated errors ``(dh, dZ)`` that attain :func:`worst_case_signal`.

    ``hd_hat`` is ``(N*Nt,)``, ``Z_hat`` is ``(ML, N*Nt)`` and ``v`` must be
    unit modulus. Returns ``dh`` of shape ``(N*Nt,)`` and ``dZ`` like ``Z_hat``.
    """
    w = np.asarray(w)
    wn = np.linalg.norm(w)
    if wn == 0:
        raise ValueError("w must be nonzero")
    ML = Z_hat.shape[0]
    sq = np.sqrt(ML)
    eps = eps_d + sq * eps_c
    h_hat = effective_channel(hd_hat, Z_hat, v)
    s = np.vdot(h_hat, w)
    if eps == 0:
        return np.zeros_like(hd_hat, dtype=complex), np.zeros_like(Z_hat, dtype=complex)
    if abs(s) >= eps * wn:
        phase = np.exp(1j * np.angle(s))
        # dh^H w must equal -eps_d ||w|| e^{j theta}; dh = c w with conj(c) = -eps_d e^{j theta}/||w||
        dh = -eps_d * np.conj(phase) * w / wn
        dZ = -eps_c * phase * np.outer(v, w.conj()) / (sq * wn)
    else:
        dh = -(eps_d / eps) * w * np.conj(s) / wn ** 2
        dZ = -(eps_c / (sq * eps)) * s * np.outer(v, w.conj()) / wn ** 2
    return dh, dZ


def worst_case_sinr(W, v, csi, noise_power=None):
    """Lower bound on each user's worst-case SINR (decoupled signal/interference bounds)."""
    sigma2 = np.asarray(csi.noise_power if noise_power is None else noise_power, float)
    Wk = stacked(W)
    H = csi.effective(v)
    eps = csi.eps
    K = Wk.shape[0]
    sig = np.abs(np.einsum("kj,kj->k", H.conj(), Wk)) - eps * np.linalg.norm(Wk, axis=1)
    sig = np.maximum(sig, 0.0)
    G = H.conj() @ Wk.T                      # G[k, j] = h_k^H w_j
    norms2 = np.sum(np.abs(Wk) ** 2, axis=1)
    out = np.empty(K)
    for k in range(K):
        others = np.arange(K) != k
        interf = np.linalg.norm(G[k, others]) + eps[k] * np.sqrt(norms2[others].sum())
        out[k] = sig[k] ** 2 / (interf ** 2 + sigma2[k])
    return out


def worst_case_sum_rate(W, v, csi, noise_power=None):
    """Guaranteed per-user worst-case rates (bits/s/Hz) and their sum."""
    rates = np.log2(1.0 + worst_case_sinr(W, v, csi, noise_power))
    return rates, float(rates.sum())


def _sphere(rng, shape, radius):
    """Samples uniform on complex spheres; ``radius`` broadcasts over leading axes."""
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    axes = tuple(range(np.ndim(radius), len(shape)))
    norm = np.sqrt(np.sum(np.abs(g) ** 2, axis=axes, keepdims=True))
    return g / norm * np.reshape(radius, np.shape(radius) + (1,) * len(axes))


def sampled_worst_case(W, v, csi, n_samples, rng, noise_power=None, include_nominal=False,
                       chunk=512):
    """Per-user minimum exact rate over sampled admissible CSI errors.

    Errors are drawn per link uniformly on the boundary of each ball
    (``||dh_{d,n,k}|| = eps_{d,n,k}``, ``||dZ_{n,k}||_F = eps_{c,n,k}``).
    With ``include_nominal`` the first sample is the zero perturbation.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sigma2 = np.asarray(csi.noise_power if noise_power is None else noise_power, float)
    Wk = stacked(W)
    N, K, Nt = csi.direct_hat.shape
    ML = csi.n_elements
    eps_d = np.asarray(csi.eps_direct, float)
    eps_c = np.asarray(csi.eps_cascaded, float)
    H = csi.effective(v)                      # (K, N*Nt)
    best = np.full(K, np.inf)
    done = 0
    while done < n_samples:
        S = min(chunk, n_samples - done)
        dh = _sphere(rng, (S, N, K, Nt), np.broadcast_to(eps_d, (S, N, K)))
        dZ = _sphere(rng, (S, N, K, ML, Nt), np.broadcast_to(eps_c, (S, N, K)))
        if include_nominal and done == 0:
            dh[0] = 0.0
            dZ[0] = 0.0
        # perturbation of effective channel: dh + dZ^H v, per AP block
        dH = dh + np.einsum("snkmt,m->snkt", dZ.conj(), v)
        Hs = H[None] + dH.transpose(0, 2, 1, 3).reshape(S, K, N * Nt)
        G = np.abs(np.einsum("skj,ij->ski", Hs.conj(), Wk)) ** 2   # |h_k^H w_i|^2
        sig = G[:, np.arange(K), np.arange(K)]
        sinr = sig / (G.sum(axis=2) - sig + sigma2[None])
        best = np.minimum(best, np.log2(1.0 + sinr).min(axis=0))
        done += S
    return best


def per_ap_power(W):
    return np.sum(np.abs(W) ** 2, axis=(1, 2))
