"""Exception types shared across the package."""


class InconsistentGridError(ValueError):
    """A patch grid leaves pixels of the target frame uncovered."""


class InsufficientDataError(ValueError):
    """A per-class training bucket is smaller than required."""

    def __init__(self, patch_class, have, needed):
        self.patch_class = patch_class
        self.have = have
        self.needed = needed
        super().__init__(
            f"class {patch_class.name.lower()!r}: have {have} training "
            f"samples, need at least {needed}"
        )


class DegenerateDataError(ValueError):
    """Training data carries no usable signal (e.g. all-zero samples)."""


class RankDeficiencyError(RuntimeError):
    """A least-squares subproblem became singular on the given support."""

    def __init__(self, support):
        self.support = tuple(int(i) for i in support)
        super().__init__(f"rank-deficient least-squares on support {self.support}")


class DivergenceError(RuntimeError):
    """An iterative solver produced non-finite values or an increasing objective."""


class DictionaryFormatError(ValueError):
    """A dictionary file is malformed, truncated, or internally inconsistent."""


class InfeasibleError(ValueError):
    """A brute-force computation exceeds its combinatorial budget."""


class ConfigurationError(ValueError):
    """A run configuration is incomplete or internally inconsistent."""


class ManifestError(ValueError):
    """An experiment manifest is malformed or references bad data."""
