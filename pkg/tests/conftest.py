import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest
import torch

from samwise import experiments
from samwise.model import Samwise, load_model
from samwise.numeric import SeededRng


def randomize_zero_inits(model: Samwise, seed: int = 0, scale: float = 0.3) -> Samwise:
    """Give the zero-initialised up-projections and detector head random weights."""
    rng = SeededRng(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if ".up_" in name or name.startswith("cme.phi."):
                p.copy_(torch.from_numpy(rng.child(name).normal(tuple(p.shape))) * scale)
    return model


@pytest.fixture(scope="session")
def busy_model():
    return randomize_zero_inits(Samwise(), seed=1)


@pytest.fixture(scope="session")
def work(tmp_path_factory):
    env = os.environ.get("SAMWISE_ACCEPT_WORK")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("accept")


@pytest.fixture(scope="session")
def backbone_model():
    if not experiments.BACKBONE.with_suffix(".json").exists():
        pytest.fail("artifacts/backbone missing; run scripts/pretrain_backbone.py")
    return load_model(experiments.BACKBONE)[0]
