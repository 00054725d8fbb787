"""Python bindings for the duel pre-finetuning lab."""

from ._duel import *  # noqa: F401,F403
from ._duel import __doc__  # noqa: F401
