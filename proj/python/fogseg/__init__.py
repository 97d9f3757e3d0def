"""Foggy-scene segmentation workbench: python surface over the native core."""

try:
    from fogseg._fogseg import *  # noqa: F401,F403  (installed layout)
    from fogseg._fogseg import __doc__  # noqa: F401
except ImportError:  # in-tree builds put the extension next to the package
    from _fogseg import *  # noqa: F401,F403
    from _fogseg import __doc__  # noqa: F401
