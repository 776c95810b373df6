"""3D keypoint signatures and soft-Jaccard image collection curation."""

try:
    from ._sigprint import *  # noqa: F401,F403
    from ._sigprint import __doc__  # noqa: F401
except ImportError:  # build-tree layout: extension module on sys.path
    from _sigprint import *  # noqa: F401,F403
