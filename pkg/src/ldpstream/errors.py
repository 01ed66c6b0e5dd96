"""Exception types shared across the package."""


class InvalidConfigError(ValueError):
    """A parameter is outside its allowed range."""


class DomainError(ValueError):
    """An input value lies outside the declared domain."""


class EmptyInputError(ValueError):
    """An aggregation received no reports."""


class DimensionMismatchError(ValueError):
    """Two vectors that must share a length do not."""


class InvalidAllocationError(ValueError):
    """A fake-user allocation violates its mass or box constraints."""


class HoleError(ValueError):
    """A rectangular stream file is missing (user, t) cells."""

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"(user={u}, t={t})" for u, t in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"missing cells: {shown}{more}")


class ParseError(ValueError):
    """A stream file row could not be parsed."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
