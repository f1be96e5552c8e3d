import pytest

from rfslope import _accel


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run the test once per kernel backend."""
    with _accel.backend(request.param):
        yield request.param


TINY_CONFIG = {
    "campaign": {"cov": [0.3], "delta_h": [1.0, 6.0], "n_per_mu": 8, "seed": 3},
    "models": {"kinds": ["LR", "DT", "RF", "GNB"], "hyperparameters": {"RF": {"n_trees": 10}}},
    "split": {"mode": "fraction", "fraction": 0.5},
    "entire_data": {"enabled": True, "count": 40},
    "cv": {"k": 3, "repeats": 2},
}


def write_config(path, doc=None, **over):
    import json

    cfg = json.loads(json.dumps(doc or TINY_CONFIG))
    cfg.update(over)
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """A complete tiny generate + train-eval run shared by the CLI and report tests."""
    from rfslope.cli import main

    root = tmp_path_factory.mktemp("bundle")
    cfg = write_config(root / "tiny.json")
    out = root / "out"
    for cmd in ("generate", "train-eval"):
        assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
