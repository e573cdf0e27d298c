"""The proposed design and the four comparison schemes on a shared drop.

Every scheme returns a :class:`SchemeRun` carrying the design together with
the CSI it was designed for and the CSI it must be judged against, so that the
evaluation path is identical for all schemes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .algorithms import DesignSolution, ao_solve, initialize, random_phases
from .model import ChannelSet, CsiEstimate
from .scenario import FadingParams, Topology, drop_rng, generate_channels, generate_csi
from .subproblems import Problem


@dataclass
class SchemeRun:
    solution: DesignSolution
    design_csi: CsiEstimate
    eval_csi: CsiEstimate
    channels: ChannelSet          # true channels of the evaluated system
    power: np.ndarray
    cap: np.ndarray
    notes: str = ""


def _budgets(config, n_aps):
    return np.full(n_aps, config.max_power), np.full(n_aps, config.backhaul_cap)


def _run(csi, config, options, rng, allowed=None, optimize_phase=True, v0=None, power=None, cap=None,
         max_ao=None):
    N = csi.direct_hat.shape[0]
    p_def, c_def = _budgets(config, N)
    power = p_def if power is None else power
    cap = c_def if cap is None else cap
    problem = Problem.from_csi(csi, power, cap, allowed)
    init = initialize(problem, rng, options, v=v0)
    opts = options if max_ao is None else replace(options, max_ao=max_ao)
    return ao_solve(problem, opts, rng, init=init, optimize_phase=optimize_phase), power, cap


def proposed_design(drop, config, options, rng):
    sol, p, c = _run(drop.csi, config, options, rng)
    return SchemeRun(sol, drop.csi, drop.csi, drop.channels, p, c)


def nonrobust_design(drop, config, options, rng):
    """Estimates are treated as exact at design time; judged with the true radii."""
    design = drop.csi.without_radii()
    sol, p, c = _run(design, config, options, rng)
    return SchemeRun(sol, design, drop.csi, drop.channels, p, c)


def randphase_design(drop, config, options, rng):
    """Random fixed phases; only the precoders (and the refinement pass) are optimized."""
    v = random_phases(rng, drop.csi.n_elements)
    sol, p, c = _run(drop.csi, config, options, rng, optimize_phase=False, v0=v, max_ao=1)
    return SchemeRun(sol, drop.csi, drop.csi, drop.channels, p, c)


def _strip_ris_csi(csi):
    return replace(csi, cascaded_hat=np.zeros_like(csi.cascaded_hat),
                   eps_cascaded=np.zeros_like(csi.eps_cascaded))


def cf_no_ris_design(drop, config, options, rng):
    """No RIS deployed: reflected links and their radii are absent."""
    csi = _strip_ris_csi(drop.csi)
    ch = drop.channels
    channels = ChannelSet(ch.direct, np.zeros_like(ch.ris_user), np.zeros_like(ch.ap_ris), ch.noise_power)
    v = np.ones(csi.n_elements, complex)
    sol, p, c = _run(csi, config, options, rng, optimize_phase=False, v0=v, max_ao=1)
    return SchemeRun(sol, csi, csi, channels, p, c)


def single_connection_mask(csi):
    """Greedy AP-user matching on estimated gains; leftover APs serve their best user.

    The gain of a pair is ``||h_d||^2 + ||Z||_F^2`` (the cascaded term is the
    mean reflected gain under random phases).
    """
    gain = (np.sum(np.abs(csi.direct_hat) ** 2, axis=2)
            + np.sum(np.abs(csi.cascaded_hat) ** 2, axis=(2, 3)))
    N, K = gain.shape
    mask = np.zeros((N, K), bool)
    free_ap, free_user = set(range(N)), set(range(K))
    while free_ap and free_user:
        sub = [(gain[n, k], n, k) for n in sorted(free_ap) for k in sorted(free_user)]
        _, n, k = max(sub, key=lambda t: (t[0], -t[1], -t[2]))
        mask[n, k] = True
        free_ap.discard(n)
        free_user.discard(k)
    for n in sorted(free_ap):
        mask[n, int(np.argmax(gain[n]))] = True
    return mask


def sc_cf_design(drop, config, options, rng):
    mask = single_connection_mask(drop.csi)
    sol, p, c = _run(drop.csi, config, options, rng, allowed=mask)
    return SchemeRun(sol, drop.csi, drop.csi, drop.channels, p, c, notes="greedy max-gain matching")


def centralized_system(drop, config, master_seed, drop_index):
    """One BS at the cell center with all AP antennas, same RISs and users.

    BS-user and BS-RIS links are drawn from a dedicated stream; RIS-user links
    are shared with the cell-free drop.
    """
    N, Nt = config.n_aps, config.antennas_per_ap
    topo = drop.topology
    bs = Topology(np.array([[0.0, 0.0, config.ap_height]]), topo.ris_positions, topo.user_positions,
                  topo.cell_radius)
    dims = replace(config.dims, n_aps=1, antennas_per_ap=N * Nt)
    rng = drop_rng(master_seed, drop_index, "centralized")
    ch = generate_channels(bs, FadingParams.from_config(config), dims, rng, config.noise_power)
    ch = ChannelSet(ch.direct, drop.channels.ris_user, ch.ap_ris, ch.noise_power)
    csi = generate_csi(ch, config.delta_d, config.delta_c, rng)
    return ch, csi


def centralized_bs_design(drop, config, options, rng, master_seed=0, drop_index=0):
    ch, csi = centralized_system(drop, config, master_seed, drop_index)
    power = np.array([config.n_aps * config.max_power])
    cap = np.array([np.inf])
    sol, p, c = _run(csi, config, options, rng, power=power, cap=cap)
    return SchemeRun(sol, csi, csi, ch, p, c,
                     notes="assumed: BS at origin, N*Nt antennas, total power N*P, no backhaul limit")


SCHEMES = {
    "proposed": proposed_design,
    "nonrobust": nonrobust_design,
    "randphase": randphase_design,
    "cf_no_ris": cf_no_ris_design,
    "sc_cf": sc_cf_design,
    "centralized": centralized_bs_design,
}


def run_scheme(name, drop, config, options, master_seed, drop_index):
    """Run one scheme with its own copy of the drop's initialization stream."""
    if name not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}")
    rng = drop_rng(master_seed, drop_index, "init")
    if name == "centralized":
        return centralized_bs_design(drop, config, options, rng, master_seed, drop_index)
    return SCHEMES[name](drop, config, options, rng)
