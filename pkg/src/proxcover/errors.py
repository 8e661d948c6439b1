"""Exception types shared across the library."""


class ProxCoverError(Exception):
    """Base class for all library errors."""


class AllZeroDensity(ProxCoverError):
    """Every sampled density value was zero; cannot normalize."""


class NegativeDensity(ProxCoverError):
    """A sampled density value was negative."""


class ParticleTooCloseToBoundary(ProxCoverError):
    """A particle sits outside the shrunken domain, so its kernel support
    would leak past the domain boundary."""

    def __init__(self, index, position):
        self.index = index
        self.position = position
        super().__init__(
            f"particle {index} at {tuple(position)} is outside the shrunken domain"
        )


class CapacityUnreachable(ProxCoverError):
    """A site cannot receive positive mass for any weight vector."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"site {index} cannot be given positive mass")


class MaxIterExceeded(ProxCoverError):
    """Iterative solver ran out of iterations; the best iterate is attached."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class TooLarge(ProxCoverError):
    """Problem size exceeds the guard for the requested exact method."""


class NotConverged(ProxCoverError):
    """Iterative solver failed to reach tolerance; the iterate is attached."""

    def __init__(self, message, iterate=None):
        self.iterate = iterate
        super().__init__(message)


class InnerNotConverged(ProxCoverError):
    """Implicit proximal sub-solve did not converge for an agent."""

    def __init__(self, index):
        self.index = index
        super().__init__(f"inner proximal solve did not converge for agent {index}")


class MissingArtifacts(ProxCoverError):
    """Run directory lacks the files needed for the requested operation."""


class ConfigError(ProxCoverError):
    """Experiment configuration failed to parse or validate."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
