"""mgrl: meta-learning a neural objective function for off-policy RL.

A population of DDPG-style agents shares a small recurrent objective network;
second-order gradients through each agent's critic tell the objective how to
change so that policies updated by it score higher. Once trained, the frozen
objective can train fresh agents on environments it never saw.
"""

__version__ = "0.1.0"

from .autodiff import backend as _backend

def backend_name():
    """Which kernel backend the autodiff engine selected at import."""
    return _backend.DEFAULT
