import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from cloudbench.core_model import reference_catalog  # noqa: E402


@pytest.fixture(scope="session")
def catalog():
    return reference_catalog()
