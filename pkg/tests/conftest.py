import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture(scope="module")
def cluster():
    from snc.services import Cluster

    with Cluster(1) as c:
        yield c


@pytest.fixture
def remote_config(cluster):
    from snc.client import CloudConfig

    cfg = CloudConfig(cluster.sched_addr, threshold=0)
    yield cfg
    cfg.close()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
