"""Discrete Klein-Gordon operators and their marching Green solves.

A field with ``c`` components lives on an ``(c, n_t, n_x)`` array.  The
operator acting on slice ``n`` is

    (T u)(n) = (u(n+1) - 2 u(n) + u(n-1)) / dt**2 + A(n) u(n),

    A(n) u = -lap u + m**2 u + rho(n) u,

where ``lap`` is the periodic three-point Laplacian and ``rho(n)`` couples
different components cell by cell.  ``T u`` is only defined on the interior
slices ``1 .. n_t - 2``; the first and last slices of the result are zero.

The retarded solve marches forward from zero data on slices 0 and 1, the
advanced solve marches backward from zero data on the last two slices.  Both
are exact one-sided inverses of ``T`` on sources that avoid the outer slices.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.linalg import solve_triangular

from .lattice import Lattice, Region, RegionError, causal_future, causal_past, cone_wraps


class SolverError(ValueError):
    """Raised when a Green solve or push is asked for something ill-posed."""


# ---------------------------------------------------------------------------
# test functions


class GridFunction:
    """Complex scalar function on the cells of a lattice."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice: Lattice, values):
        arr = np.array(values, dtype=complex)
        if arr.shape != lattice.shape:
            raise SolverError(f"values shape {arr.shape} does not match lattice {lattice.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @classmethod
    def zeros(cls, lattice: Lattice) -> "GridFunction":
        return cls(lattice, np.zeros(lattice.shape))

    @classmethod
    def delta(cls, lattice: Lattice, t: int, x: int, normalized: bool = False) -> "GridFunction":
        """Unit value at one cell; ``normalized`` divides by the cell volume."""
        arr = np.zeros(lattice.shape, dtype=complex)
        arr[t, x % lattice.n_x] = 1.0 / lattice.cell_volume if normalized else 1.0
        return cls(lattice, arr)

    @classmethod
    def indicator(cls, region: Region, amplitude: complex = 1.0) -> "GridFunction":
        return cls(region.lattice, amplitude * region.mask)

    @property
    def support(self) -> Region:
        return Region(self.lattice, self.values != 0)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.lattice != self.lattice:
                raise SolverError("lattice mismatch")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.lattice, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.lattice, self.values - self._other(other))

    def __neg__(self):
        return GridFunction(self.lattice, -self.values)

    def __mul__(self, other):
        return GridFunction(self.lattice, self.values * self._other(other))

    __rmul__ = __mul__

    def conj(self) -> "GridFunction":
        return GridFunction(self.lattice, self.values.conj())

    @property
    def is_real(self) -> bool:
        return not np.any(self.values.imag)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def to_csv(self) -> str:
        """CSV text with a lattice comment line and ``t,x,re,im`` rows."""
        return grid_to_csv(self.lattice, self.values)

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        lattice, values = grid_from_csv(text)
        return cls(lattice, values)

    def __repr__(self) -> str:
        return f"GridFunction({len(self.support)} nonzero cells on {self.lattice.n_t}x{self.lattice.n_x})"


def grid_to_csv(lattice: Lattice, values: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(f"# lattice n_t={lattice.n_t} n_x={lattice.n_x} dt={lattice.dt!r} dx={lattice.dx!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x", "re", "im"])
    ts, xs = np.nonzero(values)
    for t, x in zip(ts, xs):
        v = values[t, x]
        writer.writerow([int(t), int(x), repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


def grid_from_csv(text: str) -> tuple[Lattice, np.ndarray]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# lattice"):
        raise SolverError("missing lattice header")
    fields = dict(kv.split("=") for kv in lines[0][len("# lattice"):].split())
    lattice = Lattice(int(fields["n_t"]), int(fields["n_x"]), float(fields["dt"]), float(fields["dx"]))
    values = np.zeros(lattice.shape, dtype=complex)
    for row in csv.DictReader(lines[1:]):
        values[int(row["t"]), int(row["x"])] = complex(float(row["re"]), float(row["im"]))
    return lattice, values


class MultiComponentFunction:
    """Ordered tuple of grid functions stored as one ``(c, n_t, n_x)`` array."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice: Lattice, values):
        arr = np.array(values, dtype=complex)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != lattice.shape or arr.shape[0] < 1:
            raise SolverError(f"bad component array shape {arr.shape} for lattice {lattice.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("MultiComponentFunction is immutable")

    @classmethod
    def from_components(cls, *parts: GridFunction) -> "MultiComponentFunction":
        lattice = parts[0].lattice
        for p in parts:
            if p.lattice != lattice:
                raise SolverError("lattice mismatch between components")
        return cls(lattice, np.stack([p.values for p in parts]))

    @classmethod
    def zeros(cls, lattice: Lattice, n_components: int) -> "MultiComponentFunction":
        return cls(lattice, np.zeros((n_components,) + lattice.shape))

    @classmethod
    def embed(cls, g: GridFunction, slot: int, n_components: int) -> "MultiComponentFunction":
        """Place ``g`` in one slot, zeros elsewhere."""
        arr = np.zeros((n_components,) + g.lattice.shape, dtype=complex)
        arr[slot] = g.values
        return cls(g.lattice, arr)

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> GridFunction:
        return GridFunction(self.lattice, self.values[i])

    def __getitem__(self, i: int) -> GridFunction:
        return self.component(i)

    @property
    def components(self) -> tuple[GridFunction, ...]:
        return tuple(self.component(i) for i in range(self.n_components))

    @property
    def support(self) -> Region:
        return Region(self.lattice, np.any(self.values != 0, axis=0))

    def _other(self, other):
        if isinstance(other, MultiComponentFunction):
            if other.lattice != self.lattice or other.n_components != self.n_components:
                raise SolverError("layout mismatch")
            return other.values
        return other

    def __add__(self, other):
        return MultiComponentFunction(self.lattice, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return MultiComponentFunction(self.lattice, self.values - self._other(other))

    def __neg__(self):
        return MultiComponentFunction(self.lattice, -self.values)

    def __mul__(self, scalar):
        return MultiComponentFunction(self.lattice, self.values * scalar)

    __rmul__ = __mul__

    def conj(self) -> "MultiComponentFunction":
        return MultiComponentFunction(self.lattice, self.values.conj())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self) -> str:
        return f"MultiComponentFunction(c={self.n_components}, {len(self.support)} cells)"


def as_components(F, n_components: int | None = None) -> MultiComponentFunction:
    """Promote a GridFunction to a one-component function; check layout."""
    if isinstance(F, GridFunction):
        F = MultiComponentFunction(F.lattice, F.values[None])
    if not isinstance(F, MultiComponentFunction):
        raise TypeError(f"expected a grid function, got {type(F).__name__}")
    if n_components is not None and F.n_components != n_components:
        raise SolverError(f"expected {n_components} components, got {F.n_components}")
    return F


# ---------------------------------------------------------------------------
# operators


def _profile_array(lattice: Lattice, profile) -> np.ndarray:
    arr = profile.values if isinstance(profile, GridFunction) else np.asarray(profile)
    if arr.shape != lattice.shape:
        raise SolverError(f"coupling profile shape {arr.shape} does not match lattice")
    if np.iscomplexobj(arr):
        if np.any(arr.imag):
            raise SolverError("coupling profiles must be real")
        arr = arr.real
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CoupledOperator:
    """Klein-Gordon system with one mass per component and pair couplings.

    ``coupling`` maps index pairs ``(a, b)`` with ``a != b`` to real profiles;
    the pair is stored once with ``a < b`` and acts symmetrically.
    """

    lattice: Lattice
    masses: tuple
    coupling: Mapping = None

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        if not masses:
            raise SolverError("need at least one component")
        if any(not m > 0 for m in masses):
            raise SolverError("masses must be strictly positive")
        pairs = {}
        for (a, b), prof in dict(self.coupling or {}).items():
            a, b = int(a), int(b)
            if a == b:
                raise SolverError("coupling matrix must have zero diagonal")
            if not (0 <= a < len(masses) and 0 <= b < len(masses)):
                raise SolverError(f"coupling pair {(a, b)} out of range")
            key = (min(a, b), max(a, b))
            if key in pairs:
                raise SolverError(f"coupling pair {key} given twice")
            arr = _profile_array(self.lattice, prof)
            if np.any(arr):
                pairs[key] = arr
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "coupling", dict(sorted(pairs.items())))

    @property
    def n_components(self) -> int:
        return len(self.masses)

    @property
    def is_free(self) -> bool:
        return not self.coupling

    def free_part(self) -> "CoupledOperator":
        return CoupledOperator(self.lattice, self.masses)

    def with_coupling(self, coupling: Mapping) -> "CoupledOperator":
        return CoupledOperator(self.lattice, self.masses, coupling)

    def scaled(self, lam: float) -> "CoupledOperator":
        return self.with_coupling({k: lam * v for k, v in self.coupling.items()})

    def coupling_region(self) -> Region:
        mask = np.zeros(self.lattice.shape, dtype=bool)
        for prof in self.coupling.values():
            mask |= prof != 0
        return Region(self.lattice, mask)

    def coupling_strength(self) -> float:
        """Largest absolute coupling value (reported, never enforced)."""
        return max((float(np.max(np.abs(p))) for p in self.coupling.values()), default=0.0)

    def coupling_apply(self, F) -> MultiComponentFunction:
        """The off-diagonal part alone, cell by cell."""
        F = as_components(F, self.n_components)
        return MultiComponentFunction(self.lattice, self._couple(F.values))

    def _couple(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for (a, b), prof in self.coupling.items():
            out[a] += prof * u[b]
            out[b] += prof * u[a]
        return out

    def _spatial(self, n: int, u: np.ndarray) -> np.ndarray:
        """A(n) applied to one slice ``u`` of shape ``(c, n_x)``."""
        lat = self.lattice
        lap = (np.roll(u, 1, axis=-1) + np.roll(u, -1, axis=-1) - 2.0 * u) / lat.dx**2
        out = -lap + np.asarray(self.masses)[:, None] ** 2 * u
        for (a, b), prof in self.coupling.items():
            out[a] += prof[n] * u[b]
            out[b] += prof[n] * u[a]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoupledOperator):
            return NotImplemented
        return (
            self.lattice == other.lattice
            and self.masses == other.masses
            and self.coupling.keys() == other.coupling.keys()
            and all(np.array_equal(self.coupling[k], other.coupling[k]) for k in self.coupling)
        )

    def __hash__(self):
        return hash((self.lattice, self.masses, tuple(self.coupling)))


def apply(op: CoupledOperator, F) -> MultiComponentFunction:
    """``T F`` on interior slices; the outer slices of the result are zero."""
    F = as_components(F, op.n_components)
    if F.lattice != op.lattice:
        raise SolverError("lattice mismatch")
    lat = op.lattice
    u = F.values
    out = np.zeros_like(u)
    out[:, 1:-1] = (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) / lat.dt**2
    for n in range(1, lat.n_t - 1):
        out[:, n] += op._spatial(n, u[:, n])
    return MultiComponentFunction(lat, out)


def _check_source(op: CoupledOperator, F, direction: str, check_wrap: bool) -> MultiComponentFunction:
    F = as_components(F, op.n_components)
    if F.lattice != op.lattice:
        raise SolverError("lattice mismatch")
    v = F.values
    if np.any(v[:, 0]) or np.any(v[:, -1]):
        raise SolverError("support touches marching boundary")
    if check_wrap:
        supp = F.support
        if not supp.is_empty and cone_wraps(supp, "future" if direction == "retarded" else "past"):
            raise SolverError("cone wrap detected")
    return F


def _march(op: CoupledOperator, src: np.ndarray, forward: bool) -> np.ndarray:
    lat = op.lattice
    dt2 = lat.dt**2
    phi = np.zeros_like(src)
    n_t = lat.n_t
    if forward:
        for n in range(1, n_t - 1):
            phi[:, n + 1] = 2.0 * phi[:, n] - phi[:, n - 1] + dt2 * (src[:, n] - op._spatial(n, phi[:, n]))
    else:
        for n in range(n_t - 2, 0, -1):
            phi[:, n - 1] = 2.0 * phi[:, n] - phi[:, n + 1] + dt2 * (src[:, n] - op._spatial(n, phi[:, n]))
    return phi


def retarded(op: CoupledOperator, F, check_wrap: bool = True) -> MultiComponentFunction:
    """E+ F: zero data on slices 0 and 1, marched forward."""
    F = _check_source(op, F, "retarded", check_wrap)
    return MultiComponentFunction(op.lattice, _march(op, F.values, forward=True))


def advanced(op: CoupledOperator, F, check_wrap: bool = True) -> MultiComponentFunction:
    """E- F: zero data on the last two slices, marched backward."""
    F = _check_source(op, F, "advanced", check_wrap)
    return MultiComponentFunction(op.lattice, _march(op, F.values, forward=False))


@dataclass(frozen=True)
class GreenOperator:
    """A marching Green operator; ``direction`` is ``"retarded"`` or ``"advanced"``."""

    operator: CoupledOperator
    direction: str = "retarded"

    def __post_init__(self):
        if self.direction not in ("retarded", "advanced"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __call__(self, F, check_wrap: bool = True) -> MultiComponentFunction:
        return green_apply(self, F, check_wrap=check_wrap)


def green_apply(g: GreenOperator, F, check_wrap: bool = True) -> MultiComponentFunction:
    solve = retarded if g.direction == "retarded" else advanced
    return solve(g.operator, F, check_wrap=check_wrap)


def causal_propagator(op: CoupledOperator, F, check_wrap: bool = True) -> MultiComponentFunction:
    """E F = E- F - E+ F, a solution of the homogeneous equation."""
    F = _check_source(op, F, "advanced", False)
    if check_wrap and not F.support.is_empty and cone_wraps(F.support, "both"):
        raise SolverError("cone wrap detected")
    src = F.values
    return MultiComponentFunction(op.lattice, _march(op, src, False) - _march(op, src, True))


def pairing(op: CoupledOperator, F, G, check_wrap: bool = False) -> complex:
    """E(F, G) = dt dx sum F (E G), summed over components, without conjugation."""
    F = as_components(F, op.n_components)
    EG = causal_propagator(op, G, check_wrap=check_wrap)
    return complex(op.lattice.cell_volume * np.sum(F.values * EG.values))


def homogeneous_solution(op: CoupledOperator, data, n0: int) -> MultiComponentFunction:
    """Solve ``T u = 0`` from two-slice data ``u(n0), u(n0 + 1)``.

    ``data`` has shape ``(c, 2, n_x)``.  The result fills every slice.
    """
    lat = op.lattice
    data = np.asarray(data, dtype=complex)
    c = op.n_components
    if data.shape != (c, 2, lat.n_x):
        raise SolverError(f"on-shell data must have shape {(c, 2, lat.n_x)}, got {data.shape}")
    if not 0 <= n0 < lat.n_t - 1:
        raise SolverError(f"reference slice {n0} out of range")
    dt2 = lat.dt**2
    u = np.zeros((c,) + lat.shape, dtype=complex)
    u[:, n0] = data[:, 0]
    u[:, n0 + 1] = data[:, 1]
    for n in range(n0 + 1, lat.n_t - 1):
        u[:, n + 1] = 2.0 * u[:, n] - u[:, n - 1] - dt2 * op._spatial(n, u[:, n])
    for n in range(n0, 0, -1):
        u[:, n - 1] = 2.0 * u[:, n] - u[:, n + 1] - dt2 * op._spatial(n, u[:, n])
    return MultiComponentFunction(lat, u)


def step_source(op: CoupledOperator, u: np.ndarray, s: int) -> MultiComponentFunction:
    """``T (chi u)`` for a homogeneous ``u`` and ``chi = 1`` on slices ``<= s``.

    Only slices ``s`` and ``s + 1`` are nonzero, and ``E`` of the result is ``u``.
    """
    lat = op.lattice
    if not (1 <= s and s + 1 <= lat.n_t - 2):
        raise SolverError(f"step slice {s} leaves no room for the cut-off")
    out = np.zeros_like(u, dtype=complex)
    out[:, s] = -u[:, s + 1] / lat.dt**2
    out[:, s + 1] = u[:, s] / lat.dt**2
    return MultiComponentFunction(lat, out)


def band_slices(target: Region) -> list[int]:
    """Slices ``s`` such that ``s`` and ``s + 1`` are full slices of ``target``."""
    full = set(int(s) for s in target.full_slices())
    n_t = target.lattice.n_t
    return [s for s in sorted(full) if s + 1 in full and 1 <= s and s + 1 <= n_t - 2]


def push_to_region(op: CoupledOperator, F, target: Region, step: int | None = None) -> MultiComponentFunction:
    """Return ``F' = T(chi E F)`` supported on two full slices of ``target``.

    ``chi`` is one up to the chosen slice and zero afterwards, so ``E F' = E F``
    and ``F'`` lies in the same on-shell class as ``F``.  The earliest eligible
    pair of slices is used unless ``step`` is given.
    """
    F = as_components(F, op.n_components)
    choices = band_slices(target)
    if not choices:
        raise SolverError("target lacks two consecutive full time slices")
    if step is None:
        step = choices[0]
    elif step not in choices:
        raise SolverError(f"slices {step}, {step + 1} are not both full slices of the target")
    u = causal_propagator(op, F, check_wrap=False).values
    return step_source(op, u, step)


def born_series(op_free: CoupledOperator, coupling: Mapping, lam: float, F, order: int) -> MultiComponentFunction:
    """Partial Born sum ``sum_k (-lam)^k (E0- R)^k E0- F`` for ``k <= order``.

    ``E0-`` is the advanced Green operator of ``op_free`` and ``R`` multiplies
    by the (unscaled) off-diagonal ``coupling``.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    free = op_free.free_part()
    R = free.with_coupling(coupling)
    term = advanced(free, F, check_wrap=False)
    total = term.values.copy()
    for _ in range(order):
        term = advanced(free, R.coupling_apply(term), check_wrap=False) * (-lam)
        total = total + term.values
    return MultiComponentFunction(op_free.lattice, total)


# ---------------------------------------------------------------------------
# dense oracle


def _cell_index(c: int, n_x: int):
    def idx(t, a, x):
        return (t * c + a) * n_x + (x % n_x)

    return idx


def dense_operator_matrix(op: CoupledOperator) -> np.ndarray:
    """Assemble ``T`` as a dense matrix, cell by cell, on the flattened field.

    Rows for the first and last slices are zero.  Flattening order is
    ``(t, component, x)``.
    """
    lat = op.lattice
    c, n_t, n_x = op.n_components, lat.n_t, lat.n_x
    size = c * n_t * n_x
    if size > 4096:
        raise SolverError("dense oracle restricted to small lattices")
    idx = _cell_index(c, n_x)
    M = np.zeros((size, size))
    idt2, idx2 = 1.0 / lat.dt**2, 1.0 / lat.dx**2
    for t in range(1, n_t - 1):
        for a in range(c):
            for x in range(n_x):
                r = idx(t, a, x)
                M[r, idx(t + 1, a, x)] += idt2
                M[r, idx(t - 1, a, x)] += idt2
                M[r, idx(t, a, x)] += -2.0 * idt2 + 2.0 * idx2 + op.masses[a] ** 2
                M[r, idx(t, a, x + 1)] -= idx2
                M[r, idx(t, a, x - 1)] -= idx2
    for (a, b), prof in op.coupling.items():
        for t in range(1, n_t - 1):
            for x in range(n_x):
                M[idx(t, a, x), idx(t, b, x)] += prof[t, x]
                M[idx(t, b, x), idx(t, a, x)] += prof[t, x]
    return M


def dense_green_solve(op: CoupledOperator, F, direction: str) -> MultiComponentFunction:
    """Solve the Green problem as one triangular dense system.

    For the retarded case the unknown on slice ``m >= 2`` is fixed by the
    equation on slice ``m - 1``; reordering rows this way makes the system
    lower triangular with the two initial slices pinned to zero.
    """
    F = as_components(F, op.n_components)
    lat = op.lattice
    c, n_t, n_x = op.n_components, lat.n_t, lat.n_x
    block = c * n_x
    T = dense_operator_matrix(op)
    rhs_full = F.values.transpose(1, 0, 2).reshape(-1)
    A = np.zeros_like(T)
    rhs = np.zeros(T.shape[0], dtype=complex)
    if direction == "retarded":
        A[: 2 * block, : 2 * block] = np.eye(2 * block)
        for m in range(2, n_t):
            rows = slice(m * block, (m + 1) * block)
            src = slice((m - 1) * block, m * block)
            A[rows] = T[src]
            rhs[rows] = rhs_full[src]
        lower = True
    elif direction == "advanced":
        A[-2 * block:, -2 * block:] = np.eye(2 * block)
        for m in range(0, n_t - 2):
            rows = slice(m * block, (m + 1) * block)
            src = slice((m + 1) * block, (m + 2) * block)
            A[rows] = T[src]
            rhs[rows] = rhs_full[src]
        lower = False
    else:
        raise ValueError(f"unknown direction {direction!r}")
    sol = solve_triangular(A, rhs.real, lower=lower) + 1j * solve_triangular(A, rhs.imag, lower=lower)
    return MultiComponentFunction(lat, sol.reshape(n_t, c, n_x).transpose(1, 0, 2))


def support_violations(result: MultiComponentFunction, source, direction: str) -> int:
    """Number of cells where ``result`` is nonzero outside ``J+-(supp source)``."""
    src = as_components(source).support
    if src.is_empty:
        return len(result.support)
    cone = causal_future(src) if direction == "retarded" else causal_past(src)
    return len(result.support - cone)


__all__ = [
    "SolverError",
    "GridFunction",
    "MultiComponentFunction",
    "CoupledOperator",
    "GreenOperator",
    "apply",
    "retarded",
    "advanced",
    "green_apply",
    "causal_propagator",
    "pairing",
    "homogeneous_solution",
    "step_source",
    "push_to_region",
    "born_series",
    "dense_operator_matrix",
    "dense_green_solve",
    "support_violations",
    "RegionError",
]
