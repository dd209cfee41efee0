import pytest

from spikepose.config import RunConfig
from spikepose.data import synthesize_dataset

# 32x32 pendulum with a narrow backbone: a training epoch takes well under a second
TINY_TEXT = """
[data]
skeleton = chain
n_links = 1
link_length = 0.6
sensor_width = 32
sensor_height = 32
H = 32
W = 32
C = 2
T = 4
duration = 2
n_sequences = 1
n_eval_sequences = 1
train_stride = 8

[model]
stem_width = 8
widths = 8, 8, 8, 16
c_k = 8
c_v = 8

[train]
epochs = 2
batch = 4
"""


def tiny_config(**sections) -> RunConfig:
    cfg = RunConfig.from_text(TINY_TEXT)
    return cfg.with_updates(**sections) if sections else cfg


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    cfg = tiny_config()
    path = tmp_path_factory.mktemp("tiny") / "data"
    synthesize_dataset(path, cfg.toy_config(), 1, 0, cfg.data.contrast_threshold, True, 1)
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
