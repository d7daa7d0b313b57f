import textwrap

import pytest

DELTA_ONE_TOML = """
name = "delta_small"
n_list = [128, 256]
t_grid = [0.5, 1.0]
x_grid = [0.25, 0.5, 0.75]
reps = 400
seed = 1

[law]
kind = "discrete"
atoms = [[1.0, 1.0]]

[tolerances]
ks_alpha = 1e-4

[output]
dir = "{out}"
"""

PARETO_HEAVY_TOML = """
name = "pareto_heavy"
n_list = [64]
t_grid = [0.5, 1.0]
x_grid = [0.01, 0.1, 0.5]
reps = 20
seed = 5

[law]
kind = "pareto"
a = 1.0
b = 0.5

[output]
dir = "{out}"
"""


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML config into tmp_path with its output dir under tmp_path."""
    def _write(template, name="config.toml", out="results", **extra):
        text = textwrap.dedent(template).format(out=(tmp_path / out).as_posix(), **extra)
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


@pytest.fixture
def delta_config(write_config):
    return write_config(DELTA_ONE_TOML)


@pytest.fixture
def pareto_heavy_config(write_config):
    return write_config(PARETO_HEAVY_TOML, name="pareto_heavy.toml")
