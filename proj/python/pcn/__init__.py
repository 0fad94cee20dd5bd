"""Prototypical clustering networks: few-shot classification with a learned
embedding and a mixture of prototypes per class."""

try:
    from ._pcn import *  # noqa: F401,F403  (installed layout: pcn/_pcn.so)
    from ._pcn import __doc__ as _backend_doc  # noqa: F401
except ImportError:  # build-tree layout: _pcn.so on PYTHONPATH
    from _pcn import *  # noqa: F401,F403

__version__ = "0.1.0"
