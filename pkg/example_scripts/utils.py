import os
import sys

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))


def _set_paths():
    """
    Put the repository root on sys.path so the walkthroughs import
    scorefusion_python_sdk without an install
    """
    if REPO_ROOT not in sys.path:
        sys.path.append(REPO_ROOT)
    return REPO_ROOT
