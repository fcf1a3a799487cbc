from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from coordlab import model

DATA = Path(__file__).parent / "data"

settings.register_profile("coordlab", max_examples=60, deadline=None)
settings.load_profile("coordlab")


def binary_spec(channel, source=(0.5, 0.5), target_x=((0.5, 0.5), (0.5, 0.5)), distortion=((0, 1), (1, 0)),
                v: bool = True, caps=(2, 2), **extra):
    doc = {"alphabets": {"S": len(source), "X": 2, "Y": len(channel[0])}, "source": list(source),
           "channel": [list(r) for r in channel], "target_x": [list(r) for r in target_x],
           "aux_caps": {"w1": caps[0], "w2": caps[1]}}
    if v:
        doc["alphabets"]["V"] = len(distortion[0])
        doc["distortion"] = [list(r) for r in distortion]
    doc.update(extra)
    return model.problem_from_dict(doc)


@pytest.fixture
def bsc():
    return model.load_problem(DATA / "bsc.json")


@pytest.fixture
def xor_spec():
    return model.load_problem(DATA / "xor.json")


@pytest.fixture
def xor_aux(xor_spec):
    return model.aux_from_json((DATA / "xor_aux.json").read_text(), xor_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
