"""Variable projection for nuisance parameters in least-squares and robust fitting."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, ProjectionError, __version__
from ._core import run_experiment as _run_experiment


def run_experiment(config, out_dir):
    """Run one experiment from a config dict (or JSON text).

    Returns ``(metrics, failures, outputs)`` with ``metrics`` as a dict.
    Raises ConfigError (a ValueError) for invalid configs.
    """
    text = config if isinstance(config, str) else _json.dumps(config)
    metrics, failures, outputs = _run_experiment(text, str(out_dir))
    return _json.loads(metrics), failures, outputs
