"""Exception types shared across the package."""


class KernelGpError(Exception):
    """Base class for all package-specific errors."""


class NumericalError(KernelGpError):
    """A numerical computation produced an unusable result (NaN, non-SPD, ...)."""


class BreakdownError(NumericalError):
    """An iterative solve broke down, typically because the operator is not SPD."""


class ResourceLimitError(KernelGpError):
    """A request exceeded a configured resource budget."""
