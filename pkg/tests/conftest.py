import os
from pathlib import Path

import numpy as np
import pytest
import torch

from glyphdiff.fonts import FontAttributes, builtin_fonts
from glyphdiff.layout import allocate_boxes, parse_prompt
from glyphdiff.masks import build_char_mask, build_cond_mask
from glyphdiff.schedule import NoiseSchedule


@pytest.fixture(scope="session")
def fonts():
    return builtin_fonts()


@pytest.fixture(scope="session")
def mono5x7(fonts):
    return fonts["mono5x7"]


@pytest.fixture()
def hello_plan():
    spec = parse_prompt("A poster that says 'HELLO'")
    return allocate_boxes(spec, [FontAttributes(size_px=8, fill=(255, 0, 0))])


@pytest.fixture()
def hello_masks(hello_plan):
    return build_char_mask(hello_plan), build_cond_mask(hello_plan)


@pytest.fixture(scope="session")
def sched50():
    return NoiseSchedule.linear(T=50)


@pytest.fixture(scope="session")
def desk_artifacts(tmp_path_factory):
    """Trained desk-scale models; reuses GLYPHDIFF_TRAIN_CACHE if set.

    Training from scratch takes roughly half an hour on a small CPU box;
    point GLYPHDIFF_TRAIN_CACHE at a persistent directory (for example
    the output of scripts/train_all.py) to amortize it across runs.
    """
    from glyphdiff.deskrun import DeskRunConfig, ensure_desk_run

    root = os.environ.get("GLYPHDIFF_TRAIN_CACHE")
    if root is None:
        root = tmp_path_factory.mktemp("desk_run")
    return ensure_desk_run(root, DeskRunConfig(), log=lambda msg: None)
