"""Exception hierarchy shared by every module of the package."""


class LGHError(Exception):
    """Base class for all errors raised by :mod:`lghdiff`."""


class InvalidConfigError(LGHError, ValueError):
    """A configuration value or input argument is out of its domain."""


class ConstructionError(LGHError):
    """A random graph with the requested property could not be built."""


class IsolatedAgentError(LGHError):
    """An agent has no neighbour besides itself."""


class ProtocolError(LGHError):
    """The noise or relay protocol was driven with inconsistent inputs."""


class DegenerateKeyError(ProtocolError):
    """A shared key is zero, so its logarithm is undefined."""


class DivergedError(LGHError):
    """A diffusion iterate blew up."""

    def __init__(self, iteration, norm, trial=None, mode=None):
        where = "" if trial is None else f" (trial {trial}, mode {mode})"
        super().__init__(f"iterate norm {norm:.3e} exceeded guard at iteration {iteration}{where}")
        self.iteration = iteration
        self.norm = norm
        self.trial = trial
        self.mode = mode


class NumericalError(LGHError):
    """A linear system that should be well posed turned out singular."""
