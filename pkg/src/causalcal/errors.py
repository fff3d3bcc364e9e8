"""Exception hierarchy with stable machine-readable categories.

The ``category`` string of every exception is what the CLI emits in its
JSON error payload, so renaming a category is a breaking change.
"""


class CausalCalError(Exception):
    category = "runtime-error"


class InvalidArgumentError(CausalCalError):
    category = "invalid-argument"


class DataError(CausalCalError):
    category = "data-error"


class DegenerateDataError(CausalCalError):
    category = "degenerate-data"


class InvalidNuisanceError(CausalCalError):
    category = "invalid-nuisance"


class InvalidStateError(CausalCalError):
    category = "invalid-state"


class UnboundedObjectiveError(CausalCalError):
    category = "unbounded-objective"


class ConfigError(CausalCalError):
    category = "config-error"


class EvaluationError(CausalCalError):
    category = "evaluation-error"
