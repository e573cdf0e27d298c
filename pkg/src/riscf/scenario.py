"""Seeded topologies, Rayleigh/Rician channels and bounded CSI errors."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, CsiEstimate

CROSS_AP_GROUND = np.array([[100.0, 0.0], [-100.0, 0.0], [0.0, 100.0], [0.0, -100.0]])

STREAMS = {"topology": 1, "channels": 2, "csi": 3, "init": 4, "sampling": 5, "centralized": 6}


def drop_rng(master_seed, drop, stream):
    """Independent generator for one (drop, purpose) pair."""
    return np.random.default_rng([int(master_seed), int(drop), STREAMS[stream]])


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray    # (N, 3)
    ris_positions: np.ndarray   # (L, 3)
    user_positions: np.ndarray  # (K, 3)
    cell_radius: float


@dataclass(frozen=True)
class FadingParams:
    rician_factor: float = 3.0
    pathloss_ref_db: float = -30.0
    ref_distance: float = 1.0
    exp_direct: float = 3.75
    exp_cascaded: float = 2.2
    los_cutoff: float = 50.0

    def __post_init__(self):
        if self.rician_factor < 0:
            raise ValueError("rician factor must be >= 0")
        if self.exp_direct <= 0 or self.exp_cascaded <= 0:
            raise ValueError("path-loss exponents must be positive")

    @classmethod
    def from_config(cls, config):
        return cls(config.rician_factor, config.pathloss_ref_db, config.ref_distance,
                   config.pathloss_direct, config.pathloss_cascaded, config.los_cutoff)


def uniform_disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    phi = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def ap_ground_positions(n_aps, ring_radius=100.0):
    if n_aps == 4:
        return CROSS_AP_GROUND.copy()
    ang = 2 * np.pi * np.arange(n_aps) / n_aps
    return ring_radius * np.column_stack([np.cos(ang), np.sin(ang)])


def generate_topology(config, rng):
    if config.cell_radius <= 0:
        raise ValueError("cell radius must be positive")
    aps = ap_ground_positions(config.n_aps, config.ap_ring_radius)
    ris = uniform_disk(rng, config.n_ris, config.cell_radius)
    users = uniform_disk(rng, config.n_users, config.cell_radius)

    def lift(xy, h):
        return np.column_stack([xy, np.full(len(xy), h)])

    return Topology(lift(aps, config.ap_height), lift(ris, config.ris_height),
                    lift(users, config.user_height), float(config.cell_radius))


def path_loss(d, alpha, beta0_db=-30.0, d0=1.0):
    """Large-scale gain ``beta0 (d/d0)^-alpha`` (linear)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < d0):
        warnings.warn("distance below reference distance; clamped", RuntimeWarning, stacklevel=2)
        d = np.maximum(d, d0)
    out = 10.0 ** (beta0_db / 10.0) * (d / d0) ** (-alpha)
    return float(out) if out.ndim == 0 else out


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def steering(n, spatial):
    """Half-wavelength ULA response with spatial phase ``pi * spatial``."""
    return np.exp(1j * np.pi * np.arange(n) * spatial)


def _random_spatial(rng):
    az = rng.uniform(-np.pi, np.pi)
    el = rng.uniform(-np.pi / 2, np.pi / 2)
    return np.sin(az) * np.cos(el)


def _distances(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def generate_channels(topology, fading, dims, rng, noise_power):
    """Rayleigh direct links and Rician AP-RIS / RIS-user links."""
    N, Nt, L, M, K = (dims.n_aps, dims.antennas_per_ap, dims.n_ris, dims.elements_per_ris,
                      dims.n_users)
    kap = fading.rician_factor
    w_los, w_nlos = np.sqrt(kap / (kap + 1.0)), np.sqrt(1.0 / (kap + 1.0))
    pl = lambda d, a: path_loss(d, a, fading.pathloss_ref_db, fading.ref_distance)

    d_direct = _distances(topology.ap_positions, topology.user_positions)       # (N, K)
    direct = np.sqrt(pl(d_direct, fading.exp_direct))[..., None] * _cn(rng, (N, K, Nt))

    d_ap_ris = _distances(topology.ap_positions, topology.ris_positions)       # (N, L)
    ap_ris = np.empty((N, L, M, Nt), complex)
    for n in range(N):
        for l in range(L):
            los = np.outer(steering(M, _random_spatial(rng)), steering(Nt, _random_spatial(rng)).conj())
            nlos = _cn(rng, (M, Nt))
            ap_ris[n, l] = np.sqrt(pl(d_ap_ris[n, l], fading.exp_cascaded)) * (w_los * los + w_nlos * nlos)

    d_ris_user = _distances(topology.ris_positions, topology.user_positions)   # (L, K)
    ris_user = np.empty((L, K, M), complex)
    for l in range(L):
        for k in range(K):
            los = steering(M, _random_spatial(rng))
            nlos = _cn(rng, M)
            if d_ris_user[l, k] > fading.los_cutoff:
                small = nlos
            else:
                small = w_los * los + w_nlos * nlos
            ris_user[l, k] = np.sqrt(pl(d_ris_user[l, k], fading.exp_cascaded)) * small

    noise = np.broadcast_to(np.asarray(noise_power, float), (K,)).copy()
    return ChannelSet(direct, ris_user, ap_ris, noise)


def sample_csi_error(block, delta, rng):
    """Estimate at relative error exactly ``delta`` and its radius.

    The error is uniform on the sphere of radius ``delta * ||block||``. A
    direction is always drawn, so the same generator state yields the same
    direction for every ``delta``.
    """
    if not (0 <= delta < 1):
        raise ValueError("delta must lie in [0, 1)")
    block = np.asarray(block, complex)
    g = rng.standard_normal(block.shape) + 1j * rng.standard_normal(block.shape)
    radius = delta * np.linalg.norm(block)
    err = g / np.linalg.norm(g) * radius
    return block - err, float(radius)


def generate_csi(channels, delta_d, delta_c, rng):
    N, K, _ = channels.direct.shape
    z = channels.cascaded()
    d_hat = np.empty_like(channels.direct)
    z_hat = np.empty_like(z)
    eps_d = np.empty((N, K))
    eps_c = np.empty((N, K))
    for n in range(N):
        for k in range(K):
            d_hat[n, k], eps_d[n, k] = sample_csi_error(channels.direct[n, k], delta_d, rng)
            z_hat[n, k], eps_c[n, k] = sample_csi_error(z[n, k], delta_c, rng)
    return CsiEstimate(d_hat, z_hat, eps_d, eps_c, np.asarray(channels.noise_power, float).copy())


@dataclass(frozen=True)
class Drop:
    """Everything one Monte-Carlo drop needs: geometry, true channels and CSI."""

    topology: Topology
    channels: ChannelSet
    csi: CsiEstimate


def make_drop(config, master_seed, drop):
    """Generate the topology, channels and CSI of one drop deterministically."""
    topo = generate_topology(config, drop_rng(master_seed, drop, "topology"))
    ch = generate_channels(topo, FadingParams.from_config(config), config.dims,
                           drop_rng(master_seed, drop, "channels"), config.noise_power)
    csi = generate_csi(ch, config.delta_d, config.delta_c, drop_rng(master_seed, drop, "csi"))
    return Drop(topo, ch, csi)


# scenario dump / load ------------------------------------------------------

def _c(a):
    a = np.asarray(a)
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def _uc(d):
    return (np.array(d["re"]) + 1j * np.array(d["im"])).reshape(d["shape"])


def dump_drop(drop, meta=None):
    """JSON text with positions, true channels, estimates and radii (exact floats)."""
    t, ch, csi = drop.topology, drop.channels, drop.csi
    doc = {
        "format": "riscf-drop-1",
        "meta": meta or {},
        "topology": {"ap_positions": t.ap_positions.tolist(), "ris_positions": t.ris_positions.tolist(),
                     "user_positions": t.user_positions.tolist(), "cell_radius": t.cell_radius},
        "channels": {"direct": _c(ch.direct), "ris_user": _c(ch.ris_user), "ap_ris": _c(ch.ap_ris),
                     "noise_power": np.asarray(ch.noise_power).tolist()},
        "csi": {"direct_hat": _c(csi.direct_hat), "cascaded_hat": _c(csi.cascaded_hat),
                "eps_direct": np.asarray(csi.eps_direct).tolist(),
                "eps_cascaded": np.asarray(csi.eps_cascaded).tolist(),
                "noise_power": np.asarray(csi.noise_power).tolist()},
    }
    return json.dumps(doc)


def load_drop(text):
    doc = json.loads(text)
    if doc.get("format") != "riscf-drop-1":
        raise ValueError("unrecognized drop format")
    t = doc["topology"]
    topo = Topology(np.array(t["ap_positions"]), np.array(t["ris_positions"]),
                    np.array(t["user_positions"]), float(t["cell_radius"]))
    c = doc["channels"]
    ch = ChannelSet(_uc(c["direct"]), _uc(c["ris_user"]), _uc(c["ap_ris"]), np.array(c["noise_power"]))
    e = doc["csi"]
    csi = CsiEstimate(_uc(e["direct_hat"]), _uc(e["cascaded_hat"]), np.array(e["eps_direct"]),
                      np.array(e["eps_cascaded"]), np.array(e["noise_power"]))
    return Drop(topo, ch, csi)
