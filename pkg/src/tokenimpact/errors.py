"""Exception hierarchy shared across the package."""


class TokenImpactError(Exception):
    """Base class for all library errors."""


class ValidationError(TokenImpactError):
    """Input data violates the survey schema or a record invariant."""


class PolychoricError(TokenImpactError):
    """Latent-correlation estimation failed."""


class FactorAnalysisError(TokenImpactError):
    """Factor extraction or factor-count selection failed."""


class NoFactorError(FactorAnalysisError):
    """Parallel analysis found no factor above the noise floor."""


class GlmError(TokenImpactError):
    """Logistic model construction or fitting failed."""
