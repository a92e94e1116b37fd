import string

import numpy as np
import pytest
import torch

from agisnet.data import forge_corpus

torch.set_num_threads(1)

FONTS = ["DejaVuSans.ttf", "DejaVuSerif.ttf", "DejaVuSansMono-Bold.ttf", "DejaVuSans-Bold.ttf", "DejaVuSerif-Bold.ttf"]
CONTENT_FONT = "DejaVuSansMono.ttf"


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """3 fonts x 26 uppercase x 2 textures; the last font is held out for fine-tuning."""
    root = tmp_path_factory.mktemp("corpus")
    return forge_corpus(FONTS[:3], string.ascii_uppercase, 2, root, seed=3, holdout_fonts=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
