import json

import pytest

from demo_config import demo_config_dict


@pytest.fixture
def demo_config_path(tmp_path):
    path = tmp_path / "demo.json"
    path.write_text(json.dumps(demo_config_dict(), indent=1))
    return path
