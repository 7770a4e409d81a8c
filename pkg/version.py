"""Version information for the SHSR toolkit."""

__version__ = "0.1.0"
__version_info__ = (0, 1, 0)
__author__ = "SHSR Toolkit Contributors"
__license__ = "MIT"
__description__ = "Sequential hyper-parameter space reduction for AutoML configuration filtering"

RELEASE_NAME = "Initial Release"
MODEL_FORMAT = "shsr-filter/1"


def get_version_string():
    """Return formatted version string."""
    return f"shsr-toolkit v{__version__}"


def print_version_info():
    """Print detailed version information."""
    print(f"shsr-toolkit {__version__}")
    print(f"Release: {RELEASE_NAME}")
    print(f"Model format: {MODEL_FORMAT}")
    print(f"License: {__license__}")
