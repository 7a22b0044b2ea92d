"""Exception hierarchy.

Each error carries a machine-readable ``category`` that the CLI prints and
maps to an exit code.
"""


class FacetError(Exception):
    category = "RUNTIME"


class ConfigError(FacetError, ValueError):
    category = "CONFIG"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(FacetError, ValueError):
    category = "DATA"


class ShapeError(FacetError, ValueError):
    category = "SHAPE"


class FormatError(FacetError, ValueError):
    category = "IO"
