import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.getenv("FRI_JSR_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="desk-scale run; set FRI_JSR_SLOW=1 to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
