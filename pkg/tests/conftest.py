import pytest
import torch

from dgspnet.data import load_dataset, synth_generate


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth7")
    synth_generate(root, 8, 64, 7)
    return root


@pytest.fixture(scope="session")
def synth_train(synth_root):
    return load_dataset(synth_root, "train")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
