"""Latent-space abstraction verification toolkit.

Pipeline: sample a dynamical system, train a convex (CICO) encoder, map
regions of interest into the 2D latent space with guaranteed under/over
approximations, fit an Inclusion GP to the latent dynamics, build a sound
finite nondeterministic transition system, model-check it against an LTL
formula, refine, and decode the verified set back to the original space.
"""

__version__ = "0.1.0"


class LatentVerifyError(Exception):
    """Base class for library errors."""


class DomainError(LatentVerifyError):
    """Input outside an operation's mathematical domain."""


class InvalidFractions(LatentVerifyError):
    """Dataset split fractions are not positive or exceed 1."""


class InvalidConfidence(LatentVerifyError):
    """Confidence level outside (0, 1)."""


class TrainingDiverged(LatentVerifyError):
    """Training loss became non-finite."""


class NotConverged(LatentVerifyError):
    """Optimization failed to reach the requested tolerance."""


class NoWitness(LatentVerifyError):
    """No decoded witness available for the requested cell."""


class TooLarge(LatentVerifyError):
    """Instance exceeds the size limit of a brute-force routine."""


class UnknownProposition(LatentVerifyError):
    """Formula references a proposition with no declared mapping."""


class IncompleteNegationCover(LatentVerifyError):
    """Negation parts fail to cover the complement of a region."""


class FormulaSyntaxError(LatentVerifyError):
    """LTL parse error; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ConfigError(LatentVerifyError):
    """Run configuration is malformed or inconsistent."""


class MissingStage(LatentVerifyError):
    """A required upstream pipeline stage has not been run."""


class StaleArtifact(LatentVerifyError):
    """An upstream artifact changed after its consumer stage ran."""
