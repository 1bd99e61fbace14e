import numpy as np
import pytest
import torch
from hypothesis import settings

torch.set_num_threads(1)
settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def probe_ablation(tmp_path_factory):
    """Synthesize the colour-cast probe set and run ``ablate`` on it once per session."""
    import json

    from prodehaze.config import RunConfig
    from prodehaze.pipeline import cmd_ablate, cmd_synth

    from helpers import PROBE_CONFIG

    root = tmp_path_factory.mktemp("probe")
    cfg = RunConfig.from_dict(dict(PROBE_CONFIG, dataset_root=str(root / "data"), out_dir=str(root / "data")))
    cmd_synth(cfg)
    out = cmd_ablate(cfg.with_overrides(out_dir=str(root / "ablation")))
    return {row["config"]: row for row in json.loads((out / "ablation.json").read_text())}


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
