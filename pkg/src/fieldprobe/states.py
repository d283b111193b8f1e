"""Quasifree (Gaussian) states on the on-shell data space.

A state is fixed by its one-point vector ``v`` and truncated two-point matrix
``S`` acting on flattened class data:

    V(F) = v . d_F,    S(F, G) = d_F . S . d_G,    W = S + V (x) V.

Weyl generators then have expectation ``exp(i V(F) - S(F, F) / 2)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import block_diag

from .green import CoupledOperator, GridFunction, MultiComponentFunction, as_components
from .weyl import LayoutError, PhaseSpace, PolyObservable, SmearingClass, WeylSum, _as_class


class StateError(ValueError):
    """Raised for unstable or ill-specified states."""


def mode_table(lattice, mass: float):
    """Spatial wave numbers, continuum-like frequencies and leapfrog phases.

    Returns ``(k, omega, Omega)`` with ``cos(Omega dt) = 1 - omega**2 dt**2 / 2``.
    """
    n_x, dt, dx = lattice.n_x, lattice.dt, lattice.dx
    k = np.arange(n_x)
    omega = np.sqrt(mass**2 + (4.0 / dx**2) * np.sin(np.pi * k / n_x) ** 2)
    if np.any(omega * dt >= 2.0):
        raise StateError(f"mode instability: omega_k dt >= 2 (max {float(np.max(omega * dt)):.4g})")
    Omega = np.arccos(1.0 - 0.5 * (omega * dt) ** 2) / dt
    return k, omega, Omega


def _vacuum_block(lattice, mass: float, n0: int) -> np.ndarray:
    """Two-point matrix of the leapfrog ground state for one component."""
    _, _, Omega = mode_table(lattice, mass)
    n_x, dt, dx = lattice.n_x, lattice.dt, lattice.dx
    x = np.arange(n_x)
    alpha = dt**2 / (2.0 * np.sin(Omega * dt))
    # mode j at slice n: exp(2 pi i j x / N - i Omega_j n dt)
    phase = np.exp(2j * np.pi * np.outer(np.arange(n_x), x) / n_x)
    z0 = phase * np.exp(-1j * Omega * n0 * dt)[:, None]
    z1 = phase * np.exp(-1j * Omega * (n0 + 1) * dt)[:, None]
    a = np.concatenate([z1, -z0], axis=1) / dt**2  # rows: modes
    return (dt * dx / n_x) * (a.T * alpha) @ a.conj()


def vacuum_kernel(lattice, mass: float, t1, x1, t2, x2) -> np.ndarray:
    """Cell two-point function ``W(delta_a, delta_b)`` of the vacuum by direct mode sum.

    ``delta`` has unit integral, i.e. height ``1 / (dt dx)``.  Broadcasts over
    the index arguments.
    """
    _, _, Omega = mode_table(lattice, mass)
    n_x, dt, dx = lattice.n_x, lattice.dt, lattice.dx
    alpha = dt**2 / (2.0 * np.sin(Omega * dt))
    dtn = np.asarray(t1) - np.asarray(t2)
    dxn = np.asarray(x1) - np.asarray(x2)
    j = np.arange(n_x)
    ph = np.exp(2j * np.pi * np.multiply.outer(dxn, j) / n_x - 1j * np.multiply.outer(dtn, Omega) * dt)
    return (ph * alpha).sum(axis=-1) / (n_x * dt * dx)


class QuasifreeState:
    """Gaussian state with one-point vector ``v`` and truncated two-point ``S``."""

    def __init__(self, space: PhaseSpace, v, S, label: str = "quasifree"):
        v = np.array(v, dtype=complex).reshape(-1)
        S = np.array(S, dtype=complex)
        if v.shape != (space.dim,) or S.shape != (space.dim, space.dim):
            raise LayoutError("state data does not match the phase space")
        v.setflags(write=False)
        S.setflags(write=False)
        self.space = space
        self.v = v
        self.S_matrix = S
        self.label = label

    # evaluation on classes -------------------------------------------------

    def _data(self, F) -> np.ndarray:
        return _as_class(self.space, F).data.reshape(-1)

    def V(self, F) -> complex:
        return complex(self.v @ self._data(F))

    def S(self, F, G) -> complex:
        return complex(self._data(F) @ self.S_matrix @ self._data(G))

    def S_sym(self, F, G) -> complex:
        return 0.5 * (self.S(F, G) + self.S(G, F))

    def W(self, F, G) -> complex:
        return self.S(F, G) + self.V(F) * self.V(G)

    @property
    def is_centered(self) -> bool:
        return not np.any(self.v)

    # expectations ------------------------------------------------------------

    def expect_weyl(self, a: WeylSum) -> complex:
        if a.space != self.space:
            raise LayoutError("state and observable have different layouts")
        total = 0j
        for c, s in a.terms:
            d = s.data.reshape(-1)
            total += c * np.exp(1j * (self.v @ d) - 0.5 * (d @ self.S_matrix @ d))
        return complex(total)

    def expect_poly(self, p: PolyObservable) -> complex:
        if p.space != self.space:
            raise LayoutError("state and observable have different layouts")
        total = p.const + self.V(p.linear)
        for q, a, b in p.quad:
            total += q * (self.S_sym(a, b) + self.V(a) * self.V(b))
        return complex(total)

    def expect(self, x) -> complex:
        if isinstance(x, WeylSum):
            return self.expect_weyl(x)
        if isinstance(x, PolyObservable):
            return self.expect_poly(x)
        raise TypeError(f"cannot evaluate {type(x).__name__}")

    def __call__(self, x) -> complex:
        return self.expect(x)

    def G(self, F) -> complex:
        """``exp(-i V(F) + S(F, F) / 2)``, the inverse Weyl expectation."""
        d = self._data(F)
        return complex(np.exp(-1j * (self.v @ d) + 0.5 * (d @ self.S_matrix @ d)))

    # checks ------------------------------------------------------------------

    def ccr_defect(self) -> float:
        """Largest entry of ``S - S^T - i Om`` relative to ``|Om|``."""
        om = self.space.symplectic_matrix()
        return float(np.max(np.abs(self.S_matrix - self.S_matrix.T - 1j * om)) / np.max(np.abs(om)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the Hermitian form ``(F, G) -> S(conj F, G)``."""
        H = self.S_matrix
        H = 0.5 * (H + H.conj().T)
        return float(np.linalg.eigvalsh(H)[0])

    def marginal(self, indices) -> "QuasifreeState":
        idx = list(indices)
        sub = self.space.subspace(idx)
        c, _, n_x = self.space.data_shape
        block = 2 * n_x
        sel = np.concatenate([np.arange(i * block, (i + 1) * block) for i in idx])
        return QuasifreeState(sub, self.v[sel], self.S_matrix[np.ix_(sel, sel)], self.label)

    def __repr__(self) -> str:
        return f"QuasifreeState({self.label}, c={self.space.n_components})"


def vacuum(lattice, mass: float, n0: int | None = None) -> QuasifreeState:
    """Ground state of the leapfrog dynamics for a single free component."""
    if not mass > 0:
        raise StateError("vacuum requires a strictly positive mass")
    space = PhaseSpace(CoupledOperator(lattice, (mass,)), n0)
    S = _vacuum_block(lattice, mass, space.n0)
    return QuasifreeState(space, np.zeros(space.dim), S, label="vacuum")


def coherent(lattice, mass: float, source, n0: int | None = None) -> QuasifreeState:
    """Vacuum displaced so that ``V(F) = E(F, j)`` for the given source ``j``."""
    base = vacuum(lattice, mass, n0)
    j = _as_class(base.space, as_components(source, 1) if not isinstance(source, SmearingClass) else source)
    if np.max(np.abs(j.data.imag)) > 1e-12 * max(1.0, np.max(np.abs(j.data))):
        raise StateError("coherent source must be real")
    v = base.space.symplectic_matrix() @ j.data.real.reshape(-1)
    return QuasifreeState(base.space, v, base.S_matrix, label="coherent")


def product_state(*states: QuasifreeState) -> QuasifreeState:
    """Uncorrelated product: block-diagonal one- and two-point data."""
    if not states:
        raise StateError("need at least one state")
    space = PhaseSpace.combine(*(s.space for s in states))
    v = np.concatenate([s.v for s in states])
    S = block_diag(*(s.S_matrix for s in states))
    return QuasifreeState(space, v, S, label="(x)".join(s.label for s in states))


def state_from_spec(lattice, spec: dict, n0: int | None = None) -> QuasifreeState:
    """Build a state from ``{type: vacuum|coherent, mass, source?}``."""
    kind = spec.get("type", "vacuum")
    mass = float(spec["mass"])
    if kind == "vacuum":
        return vacuum(lattice, mass, n0)
    if kind == "coherent":
        src = spec.get("source")
        if src is None:
            raise StateError("coherent state needs a source")
        if not isinstance(src, (GridFunction, MultiComponentFunction, SmearingClass)):
            raise StateError("coherent source must be a grid function")
        return coherent(lattice, mass, src, n0)
    raise StateError(f"unknown state type {kind!r}")
