"""Custom exceptions for hvquant.

This module defines the exception hierarchy for error handling
throughout the simulator, from grid plumbing to scenario orchestration.
"""

from typing import Any


class HVQuantError(Exception):
    """Base exception for all hvquant errors.

    Attributes:
        message: Error message describing what went wrong
    """

    def __init__(self, message: str) -> None:
        """Initialize the base exception.

        Args:
            message: Error message
        """
        self.message = message
        super().__init__(self.message)


class UsageError(HVQuantError):
    """Exception raised when an operation is called with invalid arguments.

    Attributes:
        param: Parameter name
        value: The invalid value that was provided
        valid_values: List of valid values for this parameter
        message: Error message
    """

    def __init__(
        self,
        param: str,
        value: Any,
        valid_values: list[Any] | None = None,
        reason: str | None = None,
    ) -> None:
        """Initialize the usage error.

        Args:
            param: Name of the invalid parameter
            value: The invalid value that was provided
            valid_values: Optional list of valid values
            reason: Optional free-text explanation
        """
        self.param = param
        self.value = value
        self.valid_values = valid_values

        message = f"Invalid value '{value}' for parameter '{param}'"
        if valid_values:
            valid_str = ", ".join(str(v) for v in valid_values)
            message += f". Valid values are: {valid_str}"
        if reason:
            message += f" ({reason})"

        super().__init__(message)


class UnsupportedHamiltonianError(HVQuantError):
    """Exception raised when a Hamiltonian has no catalog mapping.

    Attributes:
        kind: Name of the Hamiltonian variant
        reason: Why the mapping does not exist
        message: Error message
    """

    def __init__(self, kind: str, reason: str) -> None:
        """Initialize the unsupported Hamiltonian exception.

        Args:
            kind: Name of the Hamiltonian variant
            reason: Why the mapping does not exist
        """
        self.kind = kind
        self.reason = reason
        super().__init__(f"Hamiltonian '{kind}' is not supported: {reason}")


class StabilityError(HVQuantError):
    """Exception raised when a time step violates a CFL bound.

    Attributes:
        dt: Requested time step
        limit: Largest stable time step
        criterion: Which bound was violated ('advective' or 'diffusive')
        message: Error message
    """

    def __init__(self, dt: float, limit: float, criterion: str) -> None:
        """Initialize the stability exception.

        Args:
            dt: Requested time step
            limit: Largest stable time step
            criterion: Which bound was violated
        """
        self.dt = dt
        self.limit = limit
        self.criterion = criterion
        super().__init__(
            f"Time step {dt:.6g} exceeds the {criterion} CFL limit {limit:.6g}"
        )


class CausticError(HVQuantError):
    """Exception raised when the action field stops being finite.

    Crossing classical trajectories make S multivalued; the explicit
    Hamilton-Jacobi stepper aborts instead of picking a branch.

    Attributes:
        time: Simulation time at which the failure was detected
        message: Error message
    """

    def __init__(self, time: float) -> None:
        """Initialize the caustic exception.

        Args:
            time: Simulation time of failure
        """
        self.time = time
        super().__init__(f"Action field became non-finite (caustic) at t={time:.6g}")


class NodeError(HVQuantError):
    """Exception raised when a Madelung operation meets a density node.

    Attributes:
        min_density: Smallest density found in the region of interest
        threshold: Node threshold that was violated
        message: Error message
    """

    def __init__(self, min_density: float, threshold: float, detail: str = "") -> None:
        """Initialize the node exception.

        Args:
            min_density: Smallest density found
            threshold: Node threshold
            detail: Optional context
        """
        self.min_density = min_density
        self.threshold = threshold
        message = (
            f"Density {min_density:.3e} below node threshold {threshold:.3e}"
        )
        if detail:
            message += f": {detail}"
        super().__init__(message)


class PositivityError(HVQuantError):
    """Exception raised when a density update produces negative values.

    Attributes:
        time: Simulation time after the failing step
        min_density: Most negative density sample
        message: Error message
    """

    def __init__(self, time: float, min_density: float) -> None:
        """Initialize the positivity exception.

        Args:
            time: Simulation time after the failing step
            min_density: Most negative density sample
        """
        self.time = time
        self.min_density = min_density
        super().__init__(
            f"Negative density {min_density:.3e} at t={time:.6g}; reduce dt"
        )


class HermiticityError(HVQuantError):
    """Exception raised when an expectation value has a large imaginary part.

    Attributes:
        imaginary_part: Imaginary part of <psi, H psi>
        message: Error message
    """

    def __init__(self, imaginary_part: float) -> None:
        """Initialize the hermiticity exception.

        Args:
            imaginary_part: Imaginary part of the expectation value
        """
        self.imaginary_part = imaginary_part
        super().__init__(
            f"Expectation value has imaginary part {imaginary_part:.3e}; "
            "operator is not Hermitian on this state"
        )


class SolverError(HVQuantError):
    """Exception raised when a linear solve misses its residual target.

    Attributes:
        residual: Relative residual reached
        tol: Residual target
        message: Error message
    """

    def __init__(self, residual: float, tol: float) -> None:
        """Initialize the solver exception.

        Args:
            residual: Relative residual reached
            tol: Residual target
        """
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"Linear solve did not converge: residual {residual:.3e} > {tol:.1e}"
        )


class DegenerateTestError(HVQuantError):
    """Exception raised when a test field is too close to zero to divide by.

    Attributes:
        min_value: Smallest test-field magnitude
        message: Error message
    """

    def __init__(self, min_value: float) -> None:
        """Initialize the degenerate test exception.

        Args:
            min_value: Smallest test-field magnitude
        """
        self.min_value = min_value
        super().__init__(
            f"Test field has near-zero samples (min |psi| = {min_value:.3e})"
        )


class OutOfDomainError(HVQuantError):
    """Exception raised when a point lies outside a dirichlet axis.

    Attributes:
        point: The offending coordinate vector
        axis: Index of the axis that was left
        message: Error message
    """

    def __init__(self, point: Any, axis: int) -> None:
        """Initialize the out-of-domain exception.

        Args:
            point: The offending coordinate vector
            axis: Index of the axis that was left
        """
        self.point = point
        self.axis = axis
        super().__init__(f"Point {point} lies outside the domain along axis {axis}")


class UnresolvableOutcomesError(HVQuantError):
    """Exception raised when pointer packets overlap.

    Attributes:
        ratio: Smallest gap-to-width ratio between adjacent outcomes
        required: Minimum ratio needed for classification
        message: Error message
    """

    def __init__(self, ratio: float, required: float) -> None:
        """Initialize the unresolvable outcomes exception.

        Args:
            ratio: Smallest gap-to-width ratio
            required: Minimum ratio needed
        """
        self.ratio = ratio
        self.required = required
        super().__init__(
            f"Pointer packets overlap: gap/width ratio {ratio:.3g} < {required:.3g}"
        )


class ConfigError(HVQuantError):
    """Exception raised when a scenario configuration fails validation.

    Attributes:
        errors: Every problem found, one human-readable line each
        message: Error message
    """

    def __init__(self, errors: list[str]) -> None:
        """Initialize the configuration exception.

        Args:
            errors: Every problem found
        """
        self.errors = errors
        joined = "; ".join(errors)
        super().__init__(f"Invalid configuration ({len(errors)} error(s)): {joined}")
