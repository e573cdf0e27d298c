"""Monte-Carlo sweeps over seeded drops and result emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, model
from .algorithms import audit
from .baselines import SCHEMES, run_scheme
from .config import AlgoOptions, SystemConfig
from .scenario import drop_rng, make_drop

KINDS = {
    # kind: (config field, default grid)
    "convergence": (None, (None,)),
    "power": ("max_power_dbm", (10.0, 20.0, 30.0, 40.0)),
    "backhaul": ("backhaul_mbps", (50.0, 100.0, 200.0, 400.0)),
    "delta_d": ("delta_d", (0.0, 0.02, 0.04, 0.06)),
    "delta_c": ("delta_c", (0.0, 0.02, 0.04, 0.06)),
    "elements": ("elements_per_ris", (4, 8, 12, 16)),
    "ris_count": ("n_ris", (1, 2, 3, 4)),
}
ALIASES = {f"{k}_sweep": k for k in KINDS}

COLUMNS = ("scheme", "grid_param", "grid_value", "drop", "wc_sum_rate_mbps", "sampled_wc_mbps",
           "nominal_mbps", "iters_ao", "runtime_s", "feasible")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    grid: tuple = None
    schemes: tuple = ("proposed",)
    n_drops: int = 10
    seed: int = 0
    threads: int = 1
    n_samples: int = 200
    timing: bool = False
    out_dir: str = None

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown experiment {self.kind!r}; choose from {sorted(KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.grid is None:
            object.__setattr__(self, "grid", KINDS[kind][1])
        object.__setattr__(self, "grid", tuple(self.grid))
        if not self.grid:
            raise ValueError("grid must be non-empty")
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")

    @property
    def grid_param(self):
        return KINDS[self.kind][0] or "none"


@dataclass
class Row:
    scheme: str
    grid_param: str
    grid_value: float
    drop: int
    wc_sum_rate_mbps: float
    sampled_wc_mbps: float
    nominal_mbps: float
    iters_ao: int
    runtime_s: float
    feasible: bool
    error: str = ""
    trace: str = field(default="", repr=False)
    run: object = field(default=None, repr=False, compare=False)   # kept in memory, never emitted

    def cells(self, timing=False):
        def num(x):
            return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))
        gv = "" if self.grid_value is None else num(self.grid_value)
        return [self.scheme, self.grid_param, gv, str(self.drop), num(self.wc_sum_rate_mbps),
                num(self.sampled_wc_mbps), num(self.nominal_mbps), str(self.iters_ao),
                num(self.runtime_s) if timing else "", "1" if self.feasible else "0"]


def grid_config(config, spec, value):
    param = KINDS[spec.kind][0]
    if param is None:
        return config
    caster = int if param in ("elements_per_ris", "n_ris") else float
    return replace(config, **{param: caster(value)})


def evaluate(run, config, n_samples, rng):
    """Worst-case bound, sampled worst case and nominal rate of one scheme run (bits/s/Hz)."""
    sol = run.solution
    _, wc = model.worst_case_sum_rate(sol.W, sol.v, run.eval_csi)
    sampled = model.sampled_worst_case(sol.W, sol.v, run.eval_csi, n_samples, rng, include_nominal=True)
    nominal = model.exact_rates(run.eval_csi.effective(sol.v), sol.W, run.eval_csi.noise_power)
    rep = audit(sol.W, sol.v, sol.sinr_target, run.design_csi, run.eval_csi, run.power, run.cap)
    return wc, float(np.sum(sampled)), float(np.sum(nominal)), rep


def run_drop(spec, config, options, drop_index):
    rows = []
    for gv in spec.grid:
        cfg = grid_config(config, spec, gv)
        drop = make_drop(cfg, spec.seed, drop_index)
        for name in spec.schemes:
            t0 = time.perf_counter()
            try:
                run = run_scheme(name, drop, cfg, options, spec.seed, drop_index)
                wc, sampled, nominal, rep = evaluate(run, cfg, spec.n_samples,
                                                     drop_rng(spec.seed, drop_index, "sampling"))
                rows.append(Row(name, spec.grid_param, gv, drop_index, cfg.to_mbps(wc),
                                cfg.to_mbps(sampled), cfg.to_mbps(nominal), run.solution.ao_iters,
                                time.perf_counter() - t0, rep.ok,
                                trace=run.solution.trace.dumps(spec.timing), run=run))
            except Exception as exc:  # recorded per row, the sweep continues
                rows.append(Row(name, spec.grid_param, gv, drop_index, math.nan, math.nan, math.nan,
                                0, time.perf_counter() - t0, False,
                                error="".join(traceback.format_exception_only(type(exc), exc)).strip()))
    return rows


def run_experiment(spec, config, options=None):
    """All rows of a sweep, ordered by (grid point, drop, scheme) whatever the thread count."""
    options = options or AlgoOptions()
    drops = range(spec.n_drops)
    if spec.threads == 1:
        per_drop = [run_drop(spec, config, options, d) for d in drops]
    else:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            per_drop = list(pool.map(lambda d: run_drop(spec, config, options, d), drops))
    rows = [r for chunk in per_drop for r in chunk]
    g_order = {g: i for i, g in enumerate(spec.grid)}
    s_order = {s: i for i, s in enumerate(spec.schemes)}
    rows.sort(key=lambda r: (g_order[r.grid_value], r.drop, s_order[r.scheme]))
    return rows


def averages(rows, column="wc_sum_rate_mbps"):
    """Mean of ``column`` per (scheme, grid value) over drops."""
    acc = {}
    for r in rows:
        acc.setdefault((r.scheme, r.grid_value), []).append(getattr(r, column))
    return {k: float(np.mean(v)) for k, v in acc.items()}


# emission --------------------------------------------------------------------

def to_csv(rows, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.cells(timing))
    return buf.getvalue()


def parse_csv(text):
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError("unexpected CSV header")
    for c in reader:
        rows.append(Row(c[0], c[1], None if c[2] == "" else float(c[2]), int(c[3]), float(c[4]),
                        float(c[5]), float(c[6]), int(c[7]), math.nan if c[8] == "" else float(c[8]),
                        c[9] == "1"))
    return rows


def manifest(spec, config, options, rows, csv_text):
    lines = csv_text.splitlines()[1:]
    doc = {
        "format": "riscf-manifest-1",
        "code_version": __version__,
        "experiment": spec.kind,
        "grid_param": spec.grid_param,
        "grid": list(spec.grid),
        "schemes": list(spec.schemes),
        "n_drops": spec.n_drops,
        "seed": spec.seed,
        "n_samples": spec.n_samples,
        "config": asdict(config),
        "options": asdict(options),
        "assumptions": {
            "centralized": "BS at origin, N*Nt antennas, total power N*P, no backhaul limit",
            "sc_cf": "greedy max-gain AP-user matching, leftover APs serve their best user",
            "nominal_mbps": "exact rate at the estimated channels",
            "sampled_wc_mbps": "sum of per-user minima over boundary-sampled CSI errors",
        },
        "rows": [{"digest": hashlib.sha256(ln.encode()).hexdigest(), "error": r.error}
                 for ln, r in zip(lines, rows)],
        "csv_sha256": hashlib.sha256(csv_text.encode()).hexdigest(),
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n"


def emit(rows, spec, config, options, out_dir, stem=None):
    """Write ``<stem>.csv``, ``<stem>.json`` and (for convergence runs) per-drop traces."""
    stem = stem or spec.kind
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_text = to_csv(rows, spec.timing)
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        with open(csv_path, "w") as fh:
            fh.write(csv_text)
        man_path = os.path.join(out_dir, f"{stem}.json")
        with open(man_path, "w") as fh:
            fh.write(manifest(spec, config, options, rows, csv_text))
        paths = [csv_path, man_path]
        if spec.kind == "convergence":
            for r in rows:
                if r.trace:
                    p = os.path.join(out_dir, f"trace_{r.scheme}_drop{r.drop}.tsv")
                    with open(p, "w") as fh:
                        fh.write(r.trace)
                    paths.append(p)
    except OSError as exc:
        raise OSError(f"could not write results to {out_dir!r}: {exc}") from exc
    return paths
