"""passforge: coreset-based compiler pass-order optimization, desk scale.

Pipeline: mine candidate pass sequences with a random policy, select a
coreset by greedy maximization of a submodular coverage objective, train a
graph edge-attention model to score the coreset per program, and evaluate
policies under a fixed 45-pass budget.
"""

__version__ = "0.1.0"

from .errors import ConfigError, FormatError, InputError, PassforgeError

__all__ = ["ConfigError", "FormatError", "InputError", "PassforgeError", "__version__"]
