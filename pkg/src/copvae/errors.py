"""Exception hierarchy shared by every copvae module."""


class CopvaeError(Exception):
    """Base class for library errors."""


class DomainError(CopvaeError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ArityError(CopvaeError, ValueError):
    """Wrong number of arguments, angles, columns or layer inputs."""


class ParameterError(CopvaeError, ValueError):
    """Distribution parameters violate their invariants."""


class NotPositiveDefiniteError(ParameterError):
    """A matrix expected to be symmetric positive-definite is not."""


class ConfigurationError(CopvaeError, ValueError):
    """Unknown tag, malformed config key or incompatible settings."""


class NonFiniteError(CopvaeError, FloatingPointError):
    """A NaN or infinity appeared while evaluating a taped operation."""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"non-finite value produced by operation '{op}'")


class RejectionExhaustedError(CopvaeError, RuntimeError):
    """Rejection sampling did not fill the domain within the round budget."""

    def __init__(self, rounds, acceptance_rate, scenario=None):
        self.rounds = rounds
        self.acceptance_rate = acceptance_rate
        self.scenario = scenario
        where = f" for scenario {scenario}" if scenario is not None else ""
        super().__init__(
            f"rejection sampling exhausted after {rounds} rounds{where}; "
            f"estimated acceptance rate {acceptance_rate:.3g}"
        )


class FrozenModelError(CopvaeError, RuntimeError):
    """Attempt to update the parameters of a frozen network."""


class TrainingError(CopvaeError, RuntimeError):
    """Training diverged; carries the last parameters that produced a finite loss."""

    def __init__(self, message, last_good=None, epoch=None):
        self.last_good = last_good
        self.epoch = epoch
        super().__init__(message)


class IncompleteOracleError(CopvaeError, KeyError):
    """A test scenario has no ground-truth posterior."""


class IncompatibilityError(ConfigurationError):
    """Two artifacts disagree, e.g. an encoder file and the decoder it was trained on."""


class MissingArtifactError(CopvaeError, FileNotFoundError):
    """A file produced by an earlier pipeline step is absent."""
