"""Exception and warning types shared across the library."""


class FactorLabError(Exception):
    """Base class for all library errors."""


class SingularDesign(FactorLabError):
    """Cross-sectional design matrix is numerically singular and the ridge
    fallback is disabled."""


class Diverged(FactorLabError):
    """Training loss became non-finite (usually a bad learning rate)."""


class InsufficientHistory(FactorLabError):
    """Not enough observations to build the requested feature vector."""


class InsufficientData(FactorLabError):
    """Series too short for the requested statistic."""


class MissingFactor(FactorLabError):
    """An expected factor id is absent from a forecast file."""


class MalformedRow(FactorLabError):
    """A row in an input file does not match the expected schema."""


class SingularCovariance(FactorLabError):
    """Covariance matrix not positive definite even after ridge repair."""


class DegenerateDenominator(FactorLabError):
    """Tangency normalizer 1'Sigma^-1 mu is numerically zero."""


class AllZeroWeights(FactorLabError):
    """Weight vector has no nonzero entry to truncate or normalize."""


class DegeneratePortfolioValue(FactorLabError):
    """Portfolio value collapsed to ~0 so drifted weights are undefined."""


class CostExceedsCapital(FactorLabError):
    """Transaction cost kappa * turnover >= 1 wipes out the book."""


class ConfigError(FactorLabError):
    """Invalid configuration file or option."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 field: str | None = None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        prefix = ", ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class NonMonotoneQuantiles(UserWarning):
    """Quantile values in a forecast file were not non-decreasing; sorted."""


class CollinearFactors(UserWarning):
    """A regression factor was dropped because it is collinear with the
    factors already included."""
