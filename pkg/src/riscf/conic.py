"""Solver-agnostic conic programs.

A :class:`ConicProgram` is a linear objective (maximized) over real variables
with constraints of the form ``A x + b in K`` where ``K`` is one of

* ``zero``    -- every row equals 0
* ``nonneg``  -- every row is >= 0
* ``soc``     -- ``r[0] >= ||r[1:]||``
* ``rsoc``    -- ``r[0] * r[1] >= ||r[2:]||^2`` with ``r[0], r[1] >= 0``
* ``exp``     -- ``r[1] * exp(r[0] / r[1]) <= r[2]`` with ``r[1] > 0``

Complex variables are stored as interleaved (real, imaginary) pairs. Programs
are assembled with :class:`ProgramBuilder` and solved by :func:`solve`, which
hands the program to the Clarabel interior-point solver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

CONES = ("zero", "nonneg", "soc", "rsoc", "exp")
STATUSES = ("optimal", "primal_infeasible", "dual_infeasible", "numerical_limit")


class Affine:
    """Real affine expression ``A x + b`` with ``m`` rows, stored as triplets."""

    __slots__ = ("m", "rows", "cols", "vals", "const")
    __array_ufunc__ = None  # numpy scalars defer to the reflected operators

    def __init__(self, m, rows=None, cols=None, vals=None, const=None):
        self.m = int(m)
        self.rows = np.zeros(0, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        self.cols = np.zeros(0, dtype=np.int64) if cols is None else np.asarray(cols, dtype=np.int64)
        self.vals = np.zeros(0) if vals is None else np.asarray(vals, dtype=float)
        self.const = np.zeros(self.m) if const is None else np.broadcast_to(
            np.asarray(const, dtype=float), (self.m,)).copy()

    @classmethod
    def constant(cls, values):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(values.size, const=values)

    @classmethod
    def linear(cls, matrix, idx, const=None):
        """``matrix @ x[idx] + const`` for a dense or sparse real ``matrix``."""
        idx = np.asarray(idx, dtype=np.int64).ravel()
        coo = sp.coo_matrix(np.atleast_2d(matrix) if not sp.issparse(matrix) else matrix)
        if coo.shape[1] != idx.size:
            raise ValueError(f"matrix has {coo.shape[1]} columns but {idx.size} variables given")
        keep = coo.data != 0
        return cls(coo.shape[0], coo.row[keep], idx[coo.col[keep]], coo.data[keep], const)

    @classmethod
    def select(cls, idx, scale=1.0):
        """The variables ``x[idx]`` themselves (times ``scale``)."""
        idx = np.asarray(idx, dtype=np.int64).ravel()
        return cls(idx.size, np.arange(idx.size), idx, np.full(idx.size, float(scale)))

    @staticmethod
    def vstack(exprs):
        exprs = [e if isinstance(e, Affine) else Affine.constant(e) for e in exprs]
        offsets = np.cumsum([0] + [e.m for e in exprs])
        return Affine(
            offsets[-1],
            np.concatenate([e.rows + o for e, o in zip(exprs, offsets)]),
            np.concatenate([e.cols for e in exprs]),
            np.concatenate([e.vals for e in exprs]),
            np.concatenate([e.const for e in exprs]),
        )

    def sum(self):
        return Affine(1, np.zeros_like(self.rows), self.cols, self.vals, [self.const.sum()])

    def _coerce(self, other):
        if isinstance(other, Affine):
            return other
        return Affine(self.m, const=other)

    def __add__(self, other):
        other = self._coerce(other)
        if other.m != self.m:
            if other.m == 1 and not other.vals.size:
                other = Affine(self.m, const=other.const[0])
            else:
                raise ValueError(f"row mismatch {self.m} vs {other.m}")
        return Affine(self.m, np.concatenate([self.rows, other.rows]),
                      np.concatenate([self.cols, other.cols]),
                      np.concatenate([self.vals, other.vals]), self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.m, self.rows, self.cols, -self.vals, -self.const)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        scalar = np.asarray(scalar, dtype=float)
        if scalar.ndim == 0:
            return Affine(self.m, self.rows, self.cols, self.vals * scalar, self.const * scalar)
        scalar = np.broadcast_to(scalar, (self.m,))
        return Affine(self.m, self.rows, self.cols, self.vals * scalar[self.rows], self.const * scalar)

    __rmul__ = __mul__

    def matrix(self, n_vars):
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.m, n_vars))

    def evaluate(self, x):
        out = self.const.copy()
        np.add.at(out, self.rows, self.vals * np.asarray(x)[self.cols])
        return out


class ComplexAffine:
    """Complex affine expression kept as its real and imaginary :class:`Affine` parts."""

    __slots__ = ("real", "imag")
    __array_ufunc__ = None

    def __init__(self, real, imag):
        if real.m != imag.m:
            raise ValueError("real and imaginary parts differ in length")
        self.real = real
        self.imag = imag

    @property
    def m(self):
        return self.real.m

    @classmethod
    def linear(cls, var_idx, mat=None, conj_mat=None, const=None):
        """``mat @ z + conj_mat @ conj(z) + const`` for a complex variable ``z``.

        ``var_idx`` is the ``(p, 2)`` index array of the (re, im) pairs of ``z``.
        """
        var_idx = np.asarray(var_idx)
        p = var_idx.shape[0]
        m = (mat if mat is not None else conj_mat).shape[0]
        M = np.zeros((m, p), complex) if mat is None else np.asarray(mat, complex)
        N = np.zeros((m, p), complex) if conj_mat is None else np.asarray(conj_mat, complex)
        c = np.zeros(m, complex) if const is None else np.broadcast_to(np.asarray(const, complex), (m,))
        x_idx, y_idx = var_idx[:, 0], var_idx[:, 1]
        idx = np.concatenate([x_idx, y_idx])
        re = Affine.linear(np.hstack([(M + N).real, (N - M).imag]), idx, c.real)
        im = Affine.linear(np.hstack([(M + N).imag, (M - N).real]), idx, c.imag)
        return cls(re, im)

    @classmethod
    def constant(cls, values):
        values = np.atleast_1d(np.asarray(values, complex))
        return cls(Affine.constant(values.real), Affine.constant(values.imag))

    def __add__(self, other):
        if not isinstance(other, ComplexAffine):
            other = ComplexAffine.constant(np.broadcast_to(np.asarray(other, complex), (self.m,)))
        return ComplexAffine(self.real + other.real, self.imag + other.imag)

    __radd__ = __add__

    def __neg__(self):
        return ComplexAffine(-self.real, -self.imag)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        """Multiply by a complex scalar."""
        c = complex(c)
        return ComplexAffine(self.real * c.real - self.imag * c.imag,
                             self.real * c.imag + self.imag * c.real)

    @staticmethod
    def vstack(exprs):
        return ComplexAffine(Affine.vstack([e.real for e in exprs]),
                             Affine.vstack([e.imag for e in exprs]))


def real_embedding(expr):
    """Interleave a complex expression into real rows ``(re_0, im_0, re_1, im_1, ...)``.

    A real :class:`Affine` passes through unchanged (no imaginary rows).
    """
    if isinstance(expr, Affine):
        return expr
    m = expr.m
    re, im = expr.real, expr.imag
    return Affine(2 * m, np.concatenate([2 * re.rows, 2 * im.rows + 1]),
                  np.concatenate([re.cols, im.cols]),
                  np.concatenate([re.vals, im.vals]),
                  np.column_stack([re.const, im.const]).ravel())


@dataclass(frozen=True)
class Constraint:
    """``A x + b`` lies in ``cone``."""

    A: sp.csr_matrix
    b: np.ndarray
    cone: str
    name: str = ""

    @property
    def dim(self):
        return self.A.shape[0]


@dataclass
class ConicProgram:
    n_vars: int
    objective: np.ndarray
    constraints: list
    variables: dict = field(default_factory=dict)
    objective_const: float = 0.0

    def validate(self):
        if self.objective.shape != (self.n_vars,):
            raise ValueError("objective length does not match n_vars")
        for c in self.constraints:
            if c.cone not in CONES:
                raise ValueError(f"unknown cone {c.cone!r}")
            if c.A.shape[1] != self.n_vars or c.b.shape != (c.A.shape[0],):
                raise ValueError(f"constraint {c.name!r} has inconsistent shape")
            if c.cone == "soc" and c.dim < 2:
                raise ValueError(f"soc constraint {c.name!r} needs dim >= 2")
            if c.cone == "rsoc" and c.dim < 3:
                raise ValueError(f"rsoc constraint {c.name!r} needs dim >= 3")
            if c.cone == "exp" and c.dim != 3:
                raise ValueError(f"exp constraint {c.name!r} must have dim 3")
            if not (np.all(np.isfinite(c.A.data)) and np.all(np.isfinite(c.b))):
                raise ValueError(f"constraint {c.name!r} has non-finite data")
        for name, idx in self.variables.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
                raise ValueError(f"variable {name!r} indexes outside the program")
        return self

    def cone_counts(self):
        """``{(cone, dim): count}`` -- handy for inventory checks."""
        counts = {}
        for c in self.constraints:
            key = (c.cone, c.dim) if c.cone in ("soc", "rsoc", "exp") else (c.cone, None)
            counts[key] = counts.get(key, 0) + (1 if key[1] is not None else c.dim)
        return counts

    def constraint_names(self):
        return [c.name for c in self.constraints]


class ProgramBuilder:
    def __init__(self):
        self.n_vars = 0
        self.variables = {}
        self.constraints = []
        self._objective = Affine(1)

    def var(self, name, size=1, complex=False):
        """Allocate a variable block and return its index array.

        Complex blocks return a ``(size, 2)`` array of (re, im) indices.
        """
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        width = 2 if complex else 1
        idx = np.arange(self.n_vars, self.n_vars + width * size)
        self.n_vars += width * size
        idx = idx.reshape(size, 2) if complex else idx
        self.variables[name] = idx
        return idx

    def add(self, expr, cone, name=""):
        expr = real_embedding(expr)
        self.constraints.append((expr, cone, name))

    def nonneg(self, expr, name=""):
        self.add(expr, "nonneg", name)

    def equal(self, expr, name=""):
        self.add(expr, "zero", name)

    def soc(self, bound, expr, name=""):
        """``||expr|| <= bound`` (``expr`` real or complex)."""
        self.add(Affine.vstack([bound, real_embedding(expr)]), "soc", name)

    def rsoc(self, u, w, expr, name=""):
        """``||expr||^2 <= u * w`` with ``u, w >= 0``."""
        self.add(Affine.vstack([u, w, real_embedding(expr)]), "rsoc", name)

    def exp(self, x, y, z, name=""):
        """``y * exp(x / y) <= z``."""
        self.add(Affine.vstack([x, y, z]), "exp", name)

    def maximize(self, expr):
        self._objective = expr

    def build(self):
        obj = self._objective.matrix(self.n_vars).toarray().ravel()
        cons = [Constraint(e.matrix(self.n_vars), e.const.copy(), cone, name)
                for e, cone, name in self.constraints]
        return ConicProgram(self.n_vars, obj, cons, dict(self.variables),
                            float(self._objective.const[0])).validate()


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int
    runtime: float
    variables: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def ok(self):
        return self.status in ("optimal", "numerical_limit") and self.x is not None

    def value(self, name):
        idx = np.asarray(self.variables[name])
        vals = self.x[idx]
        if idx.ndim == 2:
            return vals[:, 0] + 1j * vals[:, 1]
        return vals


@dataclass(frozen=True)
class Tolerances:
    gap_abs: float = 1e-8
    gap_rel: float = 1e-8
    feas: float = 1e-8
    max_iter: int = 200


def _to_clarabel(program):
    import clarabel

    blocks_A, blocks_b, cones = [], [], []
    for c in program.constraints:
        A, b = c.A, c.b
        if c.cone == "rsoc":
            # (u, w, x) -> (u + w, u - w, 2x) in the standard second-order cone
            T = sp.lil_matrix((c.dim, c.dim))
            T[0, 0] = T[0, 1] = T[1, 0] = 1.0
            T[1, 1] = -1.0
            for i in range(2, c.dim):
                T[i, i] = 2.0
            T = T.tocsr()
            A, b = T @ A, T @ b
        # clarabel form: s = b' - A' x in K, so A' = -A
        blocks_A.append(-A)
        blocks_b.append(b)
        if c.cone == "zero":
            cones.append(clarabel.ZeroConeT(c.dim))
        elif c.cone == "nonneg":
            cones.append(clarabel.NonnegativeConeT(c.dim))
        elif c.cone in ("soc", "rsoc"):
            cones.append(clarabel.SecondOrderConeT(c.dim))
        else:
            cones.append(clarabel.ExponentialConeT())
    A = sp.vstack(blocks_A, format="csc") if blocks_A else sp.csc_matrix((0, program.n_vars))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    return A, b, cones


def solve(program, tolerances=None):
    """Solve ``program`` (a maximization) and return a :class:`SolveResult`."""
    import clarabel

    program.validate()
    tol = tolerances or Tolerances()
    A, b, cones = _to_clarabel(program)
    P = sp.csc_matrix((program.n_vars, program.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol.gap_abs
    settings.tol_gap_rel = tol.gap_rel
    settings.tol_feas = tol.feas
    settings.max_iter = tol.max_iter
    settings.max_threads = 1
    start = time.perf_counter()
    try:
        sol = clarabel.DefaultSolver(P, -program.objective, A, b, cones, settings).solve()
    except Exception as exc:  # solver-side panic or setup error
        return SolveResult("numerical_limit", None, float("nan"), 0,
                           time.perf_counter() - start, program.variables, repr(exc))
    runtime = time.perf_counter() - start
    raw = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    if raw == "Solved":
        status = "optimal"
    elif "PrimalInfeasible" in raw:
        status, x = "primal_infeasible", None
    elif "DualInfeasible" in raw:
        status, x = "dual_infeasible", None
    else:
        status = "numerical_limit"
        if not np.all(np.isfinite(x)):
            x = None
    objective = float(program.objective @ x + program.objective_const) if x is not None else float("nan")
    return SolveResult(status, x, objective, int(sol.iterations), runtime, program.variables, raw)


def constraint_residuals(program, x):
    """Largest cone violation of each constraint at ``x`` (0 means satisfied)."""
    out = []
    for c in program.constraints:
        r = c.A @ x + c.b
        if c.cone == "zero":
            out.append(np.abs(r).max())
        elif c.cone == "nonneg":
            out.append(max(0.0, -r.min()))
        elif c.cone == "soc":
            out.append(max(0.0, np.linalg.norm(r[1:]) - r[0]))
        elif c.cone == "rsoc":
            out.append(max(0.0, r[2:] @ r[2:] - r[0] * r[1], -r[0], -r[1]))
        else:
            out.append(max(0.0, r[1] * np.exp(r[0] / r[1]) - r[2]) if r[1] > 0 else abs(min(r[1], 0.0)))
    return np.array(out)


# plain-text dump ---------------------------------------------------------

def dumps(program):
    """Serialize to a line-oriented text format.

    ::

        conic-program 1
        vars <n>
        var <name> real|complex <i0> <i1> ...
        objective <const>
        c <j> <value>                  (one line per nonzero objective coefficient)
        constraint <cone> <dim> <name or ->
        a <row> <col> <value>          (nonzeros of A)
        b <row> <value>                (nonzeros of b)
        end

    Floats use ``repr`` so a round trip is exact.
    """
    lines = ["conic-program 1", f"vars {program.n_vars}"]
    for name, idx in program.variables.items():
        idx = np.asarray(idx)
        kind = "complex" if idx.ndim == 2 else "real"
        lines.append(f"var {name} {kind} " + " ".join(str(i) for i in idx.ravel()))
    lines.append(f"objective {program.objective_const!r}")
    for j in np.flatnonzero(program.objective):
        lines.append(f"c {j} {float(program.objective[j])!r}")
    for c in program.constraints:
        lines.append(f"constraint {c.cone} {c.dim} {c.name or '-'}")
        coo = c.A.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"a {i} {j} {float(v)!r}")
        for i in np.flatnonzero(c.b):
            lines.append(f"b {i} {float(c.b[i])!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text):
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][:2] != ["conic-program", "1"]:
        raise ValueError("not a conic-program dump")
    n_vars = int(lines[1][1])
    variables, objective, const = {}, np.zeros(n_vars), 0.0
    constraints, cur = [], None

    def close():
        if cur is not None:
            cone, dim, name, trip, bvec = cur
            rows, cols, vals = (np.array(t) for t in zip(*trip)) if trip else ([], [], [])
            A = sp.csr_matrix((vals, (rows, cols)), shape=(dim, n_vars))
            constraints.append(Constraint(A, bvec, cone, "" if name == "-" else name))

    for tok in lines[2:]:
        head = tok[0]
        if head == "var":
            idx = np.array([int(t) for t in tok[3:]], dtype=np.int64)
            variables[tok[1]] = idx.reshape(-1, 2) if tok[2] == "complex" else idx
        elif head == "objective":
            const = float(tok[1])
        elif head == "c":
            objective[int(tok[1])] = float(tok[2])
        elif head == "constraint":
            close()
            dim = int(tok[2])
            cur = (tok[1], dim, tok[3], [], np.zeros(dim))
        elif head == "a":
            cur[3].append((int(tok[1]), int(tok[2]), float(tok[3])))
        elif head == "b":
            cur[4][int(tok[1])] = float(tok[2])
        elif head == "end":
            close()
            cur = None
        else:
            raise ValueError(f"unknown record {head!r}")
    return ConicProgram(n_vars, objective, constraints, variables, const).validate()
