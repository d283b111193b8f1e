"""Shared scenario builders for the test suite."""

import numpy as np

from fieldprobe.green import GridFunction
from fieldprobe.lattice import Lattice
from fieldprobe.scattering import ScatteringContext


def bump(lat, t0, t1, x0, x1, amp=0.5):
    rho = np.zeros(lat.shape)
    nt, nx = t1 - t0, x1 - x0
    bt = np.sin(np.pi * (np.arange(nt) + 1) / (nt + 1)) ** 2
    bx = np.sin(np.pi * (np.arange(nx) + 1) / (nx + 1)) ** 2
    rho[t0:t1, np.arange(x0, x1) % lat.n_x] = amp * np.outer(bt, bx)
    return rho


def random_rho(lat, rng, t_lo=3, t_hi=None, max_w=8):
    """Random real profile on a random box away from the temporal boundary."""
    t_hi = lat.n_t // 2 if t_hi is None else t_hi
    t0 = int(rng.integers(t_lo, t_hi - 2))
    t1 = int(rng.integers(t0 + 1, min(t0 + 5, t_hi) + 1))
    x0 = int(rng.integers(0, lat.n_x))
    w = int(rng.integers(1, max_w + 1))
    rho = np.zeros(lat.shape)
    xs = np.arange(x0, x0 + w) % lat.n_x
    rho[t0:t1, xs] = rng.uniform(-1, 1, size=(t1 - t0, w))
    return rho


def band(lat, rng, t0, n=2, x0=0, x1=None, cplx=False, scale=0.3):
    x1 = lat.n_x if x1 is None else x1
    v = np.zeros(lat.shape, dtype=complex)
    v[t0:t0 + n, x0:x1] = scale * rng.normal(size=(n, x1 - x0))
    if cplx:
        v[t0:t0 + n, x0:x1] += 1j * scale * rng.normal(size=(n, x1 - x0))
    return GridFunction(lat, v)


def standard_context(lam=1.0, lat=None):
    lat = lat or Lattice(24, 48)
    return ScatteringContext.single_probe(lat, 1.0, 0.8, bump(lat, 6, 10, 20, 26), lam)
