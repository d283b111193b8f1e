"""Weyl generators and degree-two field polynomials over on-shell classes.

A smearing ``F`` enters the field only through its on-shell class, the
solution ``E F`` restricted to two consecutive reference slices.  By the
discrete Wronskian identity the commutator pairing of two classes is a fixed
symplectic form on this two-slice data, so products, adjoints and equality of
observables are all decided on small arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .green import (
    CoupledOperator,
    MultiComponentFunction,
    SolverError,
    as_components,
    causal_propagator,
    homogeneous_solution,
    step_source,
)

CLASS_RTOL = 1e-10


class LayoutError(ValueError):
    """Raised when objects from incompatible phase spaces are combined."""


class DegreeOverflow(ArithmeticError):
    """Raised when a polynomial product would exceed degree two."""


@dataclass(frozen=True, eq=False)
class PhaseSpace:
    """On-shell data space of a free (or coupled) operator.

    Classes are stored as ``E F`` on slices ``n0`` and ``n0 + 1``; the default
    reference pair sits in the middle of the lattice.
    """

    operator: CoupledOperator
    n0: int = None

    def __post_init__(self):
        lat = self.operator.lattice
        n0 = (lat.n_t - 1) // 2 if self.n0 is None else int(self.n0)
        if not (1 <= n0 and n0 + 1 <= lat.n_t - 2):
            raise LayoutError("lattice too short for a reference slice pair")
        object.__setattr__(self, "n0", n0)

    @classmethod
    def free(cls, lattice, masses, n0=None) -> "PhaseSpace":
        return cls(CoupledOperator(lattice, tuple(masses)), n0)

    @property
    def lattice(self):
        return self.operator.lattice

    @property
    def n_components(self) -> int:
        return self.operator.n_components

    @property
    def data_shape(self) -> tuple[int, int, int]:
        return (self.n_components, 2, self.lattice.n_x)

    @property
    def dim(self) -> int:
        return int(np.prod(self.data_shape))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhaseSpace):
            return NotImplemented
        return self.n0 == other.n0 and self.operator == other.operator

    def __hash__(self):
        return hash((self.operator, self.n0))

    def subspace(self, indices: Iterable[int]) -> "PhaseSpace":
        idx = list(indices)
        if self.operator.coupling:
            raise LayoutError("only free phase spaces split into components")
        return PhaseSpace(CoupledOperator(self.lattice, tuple(self.operator.masses[i] for i in idx)), self.n0)

    @staticmethod
    def combine(*spaces: "PhaseSpace") -> "PhaseSpace":
        first = spaces[0]
        for s in spaces:
            if s.lattice != first.lattice or s.n0 != first.n0:
                raise LayoutError("cannot combine phase spaces on different lattices")
            if s.operator.coupling:
                raise LayoutError("only free phase spaces can be combined")
        masses = tuple(m for s in spaces for m in s.operator.masses)
        return PhaseSpace(CoupledOperator(first.lattice, masses), first.n0)

    def data(self, F) -> np.ndarray:
        F = as_components(F, self.n_components)
        u = causal_propagator(self.operator, F, check_wrap=False).values
        return u[:, self.n0:self.n0 + 2].copy()

    def cls(self, F) -> "SmearingClass":
        F = as_components(F, self.n_components)
        return SmearingClass(self, self.data(F), F)

    def zero(self) -> "SmearingClass":
        return SmearingClass(self, np.zeros(self.data_shape, dtype=complex))

    def symplectic(self, a: np.ndarray, b: np.ndarray) -> complex:
        """E(F, G) from the data of ``F`` and ``G`` (bilinear, no conjugation)."""
        lat = self.lattice
        return complex(lat.dx / lat.dt * np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))

    def symplectic_matrix(self) -> np.ndarray:
        """Matrix ``Om`` with ``E(F, G) = d_F . Om . d_G`` on flattened data."""
        c, _, n_x = self.data_shape
        lat = self.lattice
        block = np.zeros((2, 2))
        block[0, 1], block[1, 0] = 1.0, -1.0
        return lat.dx / lat.dt * np.kron(np.eye(c), np.kron(block, np.eye(n_x)))

    def solution(self, data) -> MultiComponentFunction:
        return homogeneous_solution(self.operator, data, self.n0)

    def representative(self, data) -> MultiComponentFunction:
        """A compactly supported smearing on slices ``n0, n0 + 1`` with this data."""
        return step_source(self.operator, self.solution(data).values, self.n0)


class SmearingClass:
    """Equivalence class of a smearing modulo the range of the operator."""

    __slots__ = ("space", "data", "_rep")

    def __init__(self, space: PhaseSpace, data, representative: MultiComponentFunction | None = None):
        arr = np.array(data, dtype=complex)
        if arr.shape != space.data_shape:
            raise LayoutError(f"class data shape {arr.shape} != {space.data_shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "_rep", representative)

    def __setattr__(self, name, value):
        raise AttributeError("SmearingClass is immutable")

    def representative(self) -> MultiComponentFunction:
        if self._rep is None:
            object.__setattr__(self, "_rep", self.space.representative(self.data))
        return self._rep

    def _check(self, other: "SmearingClass"):
        if other.space != self.space:
            raise LayoutError("classes from different phase spaces")

    def __add__(self, other: "SmearingClass") -> "SmearingClass":
        self._check(other)
        rep = None
        if self._rep is not None and other._rep is not None:
            rep = self._rep + other._rep
        return SmearingClass(self.space, self.data + other.data, rep)

    def __sub__(self, other: "SmearingClass") -> "SmearingClass":
        return self + (-other)

    def __neg__(self) -> "SmearingClass":
        return self * -1.0

    def __mul__(self, scalar) -> "SmearingClass":
        rep = None if self._rep is None else self._rep * scalar
        return SmearingClass(self.space, self.data * scalar, rep)

    __rmul__ = __mul__

    def conj(self) -> "SmearingClass":
        rep = None if self._rep is None else self._rep.conj()
        return SmearingClass(self.space, self.data.conj(), rep)

    def pair(self, other: "SmearingClass") -> complex:
        """Commutator pairing E(self, other)."""
        self._check(other)
        return self.space.symplectic(self.data, other.data)

    def scale(self) -> float:
        return float(np.max(np.abs(self.data)))

    def is_zero(self, rtol: float = CLASS_RTOL) -> bool:
        return self.scale() <= rtol

    def equals(self, other: "SmearingClass", rtol: float = CLASS_RTOL) -> bool:
        self._check(other)
        diff = float(np.max(np.abs(self.data - other.data)))
        return diff <= rtol * max(1.0, self.scale(), other.scale())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SmearingClass):
            return NotImplemented
        return self.space == other.space and self.equals(other)

    __hash__ = None

    def sort_key(self) -> tuple:
        flat = np.round(self.data.reshape(-1), 9)
        return tuple(v for z in flat for v in (float(z.real), float(z.imag)))

    def to_dict(self) -> dict:
        return {"re": self.data.real.tolist(), "im": self.data.imag.tolist()}

    def __repr__(self) -> str:
        return f"SmearingClass(c={self.space.n_components}, |data|={self.scale():.3g})"


def _as_class(space: PhaseSpace, F) -> SmearingClass:
    if isinstance(F, SmearingClass):
        if F.space != space:
            raise LayoutError("class from a different phase space")
        return F
    return space.cls(F)


# ---------------------------------------------------------------------------
# Weyl sector


class WeylSum:
    """Finite combination ``sum_k c_k exp(i Xi(F_k))`` with merged classes."""

    __slots__ = ("space", "terms")

    def __init__(self, space: PhaseSpace, terms: Iterable[tuple[complex, SmearingClass]] = (), prune: float = 0.0):
        merged: list[list] = []
        for coef, cls in terms:
            if cls.space != space:
                raise LayoutError("term from a different phase space")
            for slot in merged:
                if slot[1].equals(cls):
                    slot[0] += complex(coef)
                    break
            else:
                merged.append([complex(coef), cls])
        kept = tuple((c, s) for c, s in merged if abs(c) > prune)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "terms", kept)

    def __setattr__(self, name, value):
        raise AttributeError("WeylSum is immutable")

    @classmethod
    def unit(cls, space: PhaseSpace) -> "WeylSum":
        return cls(space, [(1.0, space.zero())])

    @classmethod
    def generator(cls, space: PhaseSpace, F, coef: complex = 1.0) -> "WeylSum":
        """``coef * exp(i Xi(F))`` for a smearing or class ``F``."""
        return cls(space, [(coef, _as_class(space, F))])

    def _check(self, other: "WeylSum"):
        if not isinstance(other, WeylSum) or other.space != self.space:
            raise LayoutError("Weyl sums from different contexts")

    def __add__(self, other: "WeylSum") -> "WeylSum":
        self._check(other)
        return WeylSum(self.space, self.terms + other.terms)

    def __sub__(self, other: "WeylSum") -> "WeylSum":
        return self + other * -1.0

    def __mul__(self, other):
        if isinstance(other, WeylSum):
            return weyl_product(self, other)
        return WeylSum(self.space, [(c * other, s) for c, s in self.terms])

    def __rmul__(self, scalar):
        return WeylSum(self.space, [(c * scalar, s) for c, s in self.terms])

    def __len__(self) -> int:
        return len(self.terms)

    def adjoint(self) -> "WeylSum":
        return adjoint(self)

    def coefficient(self, cls: SmearingClass) -> complex:
        for c, s in self.terms:
            if s.equals(cls):
                return c
        return 0j

    def is_scalar(self, atol: float = 1e-12) -> bool:
        return all(s.is_zero() or abs(c) <= atol for c, s in self.terms)

    def scalar_part(self) -> complex:
        return self.coefficient(self.space.zero())

    def equals(self, other: "WeylSum", atol: float = 1e-10) -> bool:
        """Coefficientwise comparison after canonical merge."""
        self._check(other)
        diff = self - other
        return all(abs(c) <= atol * max(1.0, self.norm1(), other.norm1()) for c, _ in diff.terms)

    def norm1(self) -> float:
        return float(sum(abs(c) for c, _ in self.terms))

    def to_list(self) -> list[dict]:
        return [
            {"coeff_re": c.real, "coeff_im": c.imag, "smearing": s.to_dict()}
            for c, s in sorted(self.terms, key=lambda t: t[1].sort_key())
        ]

    def __repr__(self) -> str:
        return f"WeylSum({len(self.terms)} terms)"


def weyl_product(a: WeylSum, b: WeylSum) -> WeylSum:
    """Bilinear extension of ``e^{iX(F)} e^{iX(G)} = e^{-iE(F,G)/2} e^{iX(F+G)}``."""
    a._check(b)
    terms = []
    for ca, sa in a.terms:
        for cb, sb in b.terms:
            phase = np.exp(-0.5j * sa.pair(sb))
            terms.append((ca * cb * phase, sa + sb))
    return WeylSum(a.space, terms)


def adjoint(a: WeylSum) -> WeylSum:
    """``(c e^{iX(F)})* = conj(c) e^{-iX(conj F)}``."""
    return WeylSum(a.space, [(np.conj(c), -s.conj()) for c, s in a.terms])


def commutator(a: WeylSum, b: WeylSum) -> WeylSum:
    return weyl_product(a, b) - weyl_product(b, a)


def tensor_embed(a_system: WeylSum, b_probe: WeylSum, space: PhaseSpace | None = None) -> WeylSum:
    """``A (x) B`` on the combined space: system data first, then probe data."""
    if space is None:
        space = PhaseSpace.combine(a_system.space, b_probe.space)
    if space.n_components != a_system.space.n_components + b_probe.space.n_components:
        raise LayoutError("component layout mismatch in tensor embedding")
    if space.subspace(range(a_system.space.n_components)) != a_system.space:
        raise LayoutError("system layout mismatch in tensor embedding")
    terms = []
    for ca, sa in a_system.terms:
        for cb, sb in b_probe.terms:
            terms.append((ca * cb, SmearingClass(space, np.concatenate([sa.data, sb.data]))))
    return WeylSum(space, terms)


def split_class(cls: SmearingClass, n_first: int) -> tuple[np.ndarray, np.ndarray]:
    return cls.data[:n_first], cls.data[n_first:]


# ---------------------------------------------------------------------------
# polynomial sector


def _pair_key(a: SmearingClass, b: SmearingClass):
    return (a, b) if a.sort_key() <= b.sort_key() else (b, a)


class PolyObservable:
    """``c0 + Phi(l) + sum_k q_k Phi(a_k) o Phi(b_k)`` with ``o`` symmetrized."""

    __slots__ = ("space", "const", "linear", "quad")

    def __init__(self, space: PhaseSpace, const: complex = 0.0, linear: SmearingClass | None = None,
                 quad: Iterable[tuple[complex, SmearingClass, SmearingClass]] = ()):
        if linear is None:
            linear = space.zero()
        elif linear.space != space:
            raise LayoutError("linear part from a different phase space")
        merged: list[list] = []
        for q, a, b in quad:
            if a.space != space or b.space != space:
                raise LayoutError("quadratic term from a different phase space")
            a, b = _pair_key(a, b)
            for slot in merged:
                if slot[1].equals(a) and slot[2].equals(b):
                    slot[0] += complex(q)
                    break
            else:
                merged.append([complex(q), a, b])
        quad_t = tuple((q, a, b) for q, a, b in merged if q != 0 and not a.is_zero() and not b.is_zero())
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "const", complex(const))
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "quad", quad_t)

    def __setattr__(self, name, value):
        raise AttributeError("PolyObservable is immutable")

    @classmethod
    def scalar(cls, space: PhaseSpace, c: complex = 1.0) -> "PolyObservable":
        return cls(space, const=c)

    @classmethod
    def field(cls, space: PhaseSpace, F, coef: complex = 1.0) -> "PolyObservable":
        """``coef * Phi(F)``."""
        return cls(space, linear=_as_class(space, F) * coef)

    @classmethod
    def sym(cls, space: PhaseSpace, F, G, coef: complex = 1.0) -> "PolyObservable":
        """``coef * (Phi(F) Phi(G) + Phi(G) Phi(F)) / 2``."""
        return cls(space, quad=[(coef, _as_class(space, F), _as_class(space, G))])

    @property
    def degree(self) -> int:
        if self.quad:
            return 2
        return 0 if self.linear.is_zero() else 1

    def _check(self, other: "PolyObservable"):
        if not isinstance(other, PolyObservable) or other.space != self.space:
            raise LayoutError("polynomials from different contexts")

    def __add__(self, other):
        if not isinstance(other, PolyObservable):
            return PolyObservable(self.space, self.const + other, self.linear, self.quad)
        self._check(other)
        return PolyObservable(self.space, self.const + other.const, self.linear + other.linear,
                              self.quad + other.quad)

    __radd__ = __add__

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, other):
        if isinstance(other, PolyObservable):
            return poly_product(self, other)
        return PolyObservable(self.space, self.const * other, self.linear * other,
                              [(q * other, a, b) for q, a, b in self.quad])

    def __rmul__(self, scalar):
        return self * scalar

    def adjoint(self) -> "PolyObservable":
        return PolyObservable(self.space, np.conj(self.const), self.linear.conj(),
                              [(np.conj(q), a.conj(), b.conj()) for q, a, b in self.quad])

    def equals(self, other: "PolyObservable", atol: float = 1e-10) -> bool:
        self._check(other)
        d = self - other
        if abs(d.const) > atol or d.linear.scale() > atol:
            return False
        return all(abs(q) * a.scale() * b.scale() <= atol for q, a, b in d.quad)

    def to_dict(self) -> dict:
        return {
            "const": [self.const.real, self.const.imag],
            "linear": self.linear.to_dict(),
            "quadratic": [
                {"coeff": [q.real, q.imag], "a": a.to_dict(), "b": b.to_dict()}
                for q, a, b in sorted(self.quad, key=lambda t: (t[1].sort_key(), t[2].sort_key()))
            ],
        }

    def __repr__(self) -> str:
        return f"PolyObservable(degree={self.degree}, {len(self.quad)} quadratic terms)"


def poly_product(p: PolyObservable, q: PolyObservable, truncate: bool = False) -> PolyObservable:
    """Product in the field algebra, keeping degree at most two.

    ``Phi(a) Phi(b) = sym(a, b) + (i/2) E(a, b)``.  Terms of degree three or
    four raise :class:`DegreeOverflow` unless ``truncate`` drops them.
    """
    p._check(q)
    if not truncate and p.degree + q.degree > 2:
        raise DegreeOverflow("degree overflow: product exceeds degree two")
    space = p.space
    const = p.const * q.const
    linear = p.linear * q.const + q.linear * p.const
    quad = [(t * q.const, a, b) for t, a, b in p.quad] + [(t * p.const, a, b) for t, a, b in q.quad]
    if not p.linear.is_zero() and not q.linear.is_zero():
        quad.append((1.0, p.linear, q.linear))
        const += 0.5j * p.linear.pair(q.linear)
    return PolyObservable(space, const, linear, quad)


def poly_commutator(p: PolyObservable, q: PolyObservable) -> PolyObservable:
    return poly_product(p, q) - poly_product(q, p)


def poly_from_weyl_derivative(a: WeylSum, order: int) -> PolyObservable:
    """``d^k/dlam^k`` at zero of ``sum c exp(i lam Xi(F))`` for ``k <= 2``."""
    space = a.space
    if order == 0:
        return PolyObservable(space, const=sum(c for c, _ in a.terms))
    if order == 1:
        lin = space.zero()
        for c, s in a.terms:
            lin = lin + s * (1j * c)
        return PolyObservable(space, linear=lin)
    if order == 2:
        return PolyObservable(space, quad=[(-c, s, s) for c, s in a.terms])
    raise DegreeOverflow("degree overflow: derivatives above second order")
