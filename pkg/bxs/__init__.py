import logging

logger = logging.getLogger(__name__)

__version__ = "20261017.0BETA"

# This is a bit of a hack. When setup.py is run, if and only if, it is a git repo, this
# will get set. Otherwise, it is None
__git_version__ = None
