"""Numerical tools for the strong-coupling polaron path measure.

Modules
-------
pekar          radial Pekar variational solver
pekar_process  Euler-Maruyama sampler for the Pekar diffusion
gibbs          pCN path MCMC for the finite-horizon polaron measure
clusters       Poisson interval clusters, tilted renewal and sigma^2
experiments    strong-coupling sweep and increment-law comparison
io, cli        configuration, seeding, artifacts and the command line
"""

from .errors import (ConfigurationError, EfficiencyError, InsufficientSampleError, IterationLimitError,
                     MixingError, ModeError, NormalizationError, NumericalError, PolaronError,
                     PositivityError, RootNotFoundError, SingularityError, TruncationError)

__version__ = "0.1.0"
