"""Exception types shared across the package."""


class BlockfillError(Exception):
    """Base class; carries an optional stage label and extra diagnostics."""

    def __init__(self, message, *, stage=None, detail=None):
        super().__init__(message)
        self.stage = stage
        self.detail = detail or {}

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class InvalidInput(BlockfillError, ValueError):
    pass


class IllConditioned(BlockfillError):
    """An SPD input has an eigenvalue at or below the floor."""


class RankDeficient(BlockfillError):
    """Embedding covariances are not full rank."""


class NoAdmissibleRank(BlockfillError):
    """The separated-rank set is empty."""


class InapplicableTheorem(BlockfillError):
    """A verifier was called where its hypotheses cannot hold (zero gap, zero singular value)."""
