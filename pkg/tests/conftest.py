import pytest

from nested_tagger.schema import default_schema


@pytest.fixture(scope="session")
def schema():
    return default_schema()
