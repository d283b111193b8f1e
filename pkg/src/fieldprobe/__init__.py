"""Measurement of a lattice Klein-Gordon field through coupled probe fields."""

__version__ = "0.1.0"

from .lattice import Lattice, Region, RegionError, causal_future, causal_past, causal_hull  # noqa: E402
from .green import CoupledOperator, GridFunction, MultiComponentFunction, SolverError, advanced, retarded  # noqa: E402
from .weyl import PhaseSpace, PolyObservable, SmearingClass, WeylSum, weyl_product  # noqa: E402
from .states import QuasifreeState, coherent, product_state, vacuum  # noqa: E402
from .scattering import ScatteringContext, induced_observable, scatter, scattered_pair  # noqa: E402
from .instruments import InstrumentError, PreInstrument, compose_instruments, post_select  # noqa: E402
from .detector import DetectorScenario, Worldline, exact_expectation, perturbative_expectation  # noqa: E402
