"""Scenario and algorithm parameters.

Configuration files are plain ``key = value`` text, one entry per line, with
``#`` comments. Keys are the field names of :class:`SystemConfig` and
:class:`AlgoOptions`; unknown keys are an error. Example::

    # desk-scale run, tighter backhaul
    preset = desk
    backhaul_mbps = 100
    delta_c = 0.06

A ``preset`` line (``desk`` or ``large``) is applied first, regardless of its
position in the file.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

from .model import Dimensions


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    n_aps: int = 4
    antennas_per_ap: int = 2
    n_ris: int = 2
    elements_per_ris: int = 8
    n_users: int = 3
    cell_radius: float = 100.0        # m
    ap_ring_radius: float = 100.0     # m, used when n_aps != 4
    ap_height: float = 20.0
    ris_height: float = 5.0
    user_height: float = 1.5
    rician_factor: float = 3.0
    pathloss_ref_db: float = -30.0
    ref_distance: float = 1.0
    pathloss_direct: float = 3.75
    pathloss_cascaded: float = 2.2
    los_cutoff: float = 50.0          # m, RIS-user links beyond this are NLoS only
    bandwidth_hz: float = 10e6
    noise_dbm: float = -80.0
    max_power_dbm: float = 30.0
    backhaul_mbps: float = 200.0      # inf disables the backhaul constraints
    backhaul_margin: float = 1.1
    delta_d: float = 0.02
    delta_c: float = 0.04

    def __post_init__(self):
        Dimensions(self.n_aps, self.antennas_per_ap, self.n_ris, self.elements_per_ris, self.n_users)
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be >= 0")
        if self.pathloss_direct <= 0 or self.pathloss_cascaded <= 0:
            raise ValueError("path-loss exponents must be positive")
        if self.backhaul_margin < 1:
            raise ValueError("backhaul_margin must be >= 1")
        if not (0 <= self.delta_d < 1 and 0 <= self.delta_c < 1):
            raise ValueError("uncertainty levels must lie in [0, 1)")
        if self.backhaul_mbps <= 0:
            raise ValueError("backhaul_mbps must be positive")

    @property
    def dims(self):
        return Dimensions(self.n_aps, self.antennas_per_ap, self.n_ris, self.elements_per_ris,
                          self.n_users)

    @property
    def noise_power(self):
        return dbm_to_watt(self.noise_dbm)

    @property
    def max_power(self):
        return dbm_to_watt(self.max_power_dbm)

    @property
    def backhaul_cap(self):
        """Per-AP backhaul limit C/(xi * bandwidth) in bits/s/Hz (inf when unconstrained)."""
        if math.isinf(self.backhaul_mbps):
            return math.inf
        return self.backhaul_mbps * 1e6 / (self.backhaul_margin * self.bandwidth_hz)

    def to_mbps(self, spectral_efficiency):
        return spectral_efficiency * self.bandwidth_hz / 1e6


@dataclass(frozen=True)
class AlgoOptions:
    varpi: float = 1e-3
    eps: float = 1e-4            # SCA / AO relative tolerance
    phi1: float = 1e-3           # P-CCP slack tolerance
    phi2: float = 1e-3           # P-CCP step tolerance
    rho0: float = 1.0
    mu: float = 3.0
    rho_max: float = 1e3
    mu_th: float = 1e-3
    max_pccp: int = 50
    max_sca: int = 50
    max_ao: int = 30

    def __post_init__(self):
        if self.varpi <= 0 or self.eps <= 0 or self.phi1 <= 0 or self.phi2 <= 0:
            raise ValueError("tolerances and varpi must be positive")
        if self.mu <= 1:
            raise ValueError("mu must exceed 1")
        if not (0 < self.rho0 <= self.rho_max):
            raise ValueError("need 0 < rho0 <= rho_max")
        if self.mu_th <= 0:
            raise ValueError("mu_th must be positive")


PRESETS = {
    "desk": {},
    "large": dict(antennas_per_ap=4, elements_per_ris=16, n_ris=4, n_users=4),
}


def _coerce(field_type, text):
    if field_type in (int, "int"):
        return int(text)
    return float(text)


def parse_config(text):
    """Parse ``key = value`` text into ``(SystemConfig, AlgoOptions)``."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    sys_kw = dict(PRESETS[entries.pop("preset")]) if "preset" in entries else {}
    algo_kw = {}
    sys_fields = {f.name: f.type for f in fields(SystemConfig)}
    algo_fields = {f.name: f.type for f in fields(AlgoOptions)}
    for key, value in entries.items():
        if key in sys_fields:
            sys_kw[key] = _coerce(sys_fields[key], value)
        elif key in algo_fields:
            algo_kw[key] = _coerce(algo_fields[key], value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return SystemConfig(**sys_kw), AlgoOptions(**algo_kw)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def preset(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SystemConfig(**{**PRESETS[name], **overrides})


def format_config(config, options):
    lines = [f"{k} = {v!r}" for k, v in asdict(config).items()]
    lines += [f"{k} = {v!r}" for k, v in asdict(options).items()]
    return "\n".join(lines) + "\n"


def with_overrides(config, **kw):
    return replace(config, **kw)
