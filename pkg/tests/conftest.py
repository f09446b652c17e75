from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def alsace_config() -> Path:
    return FIXTURES / "alsace" / "pipeline.ini"
