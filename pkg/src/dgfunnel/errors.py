"""Exception types shared across the toolkit."""


class DGFunnelError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(DGFunnelError):
    """A matrix argument contains NaN or infinity."""


class NonSquare(DGFunnelError):
    """A square matrix was required."""


class LogUndefined(DGFunnelError):
    """Principal matrix logarithm does not exist (eigenvalue on the closed
    negative real axis), or a fractional power of a defective matrix was
    requested."""


class SingularKinematics(DGFunnelError):
    """Euler kinematics are singular: |pitch| at or beyond pi/2."""


class SingularQ(DGFunnelError):
    """An ellipsoid shape matrix is singular or indefinite."""


class DegenerateRegion(DGFunnelError):
    """A sampling region has zero volume."""


class InfeasibleControls(DGFunnelError):
    """Recovered nominal controls violate the control limits."""


class Infeasible(DGFunnelError):
    """No point on the multiplier grid admits a feasible solution."""


class SolverFailure(DGFunnelError):
    """The conic solver broke down without a clean infeasibility certificate."""


class InfeasibleNode(DGFunnelError):
    """A per-node regularizability LMI is infeasible."""


class MissingColumn(DGFunnelError):
    """A required CSV column is absent."""


class ConfigError(DGFunnelError):
    """A run configuration failed schema or semantic validation."""
