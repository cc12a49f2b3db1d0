import pytest

from hnn_mcmc.network import Architecture, TrainConfig, train
from hnn_mcmc.samplers import generate_training_data
from hnn_mcmc.targets import GaussianMixture1D

# 1-D mixture desk setup: 20 training trajectories of T = 20 at dt = 0.05
MIXTURE_TRAINING = dict(M_t=20, T=20.0, dt=0.05, seed=1)
MIXTURE_NET = dict(hidden=(100, 100, 100), steps=10_000, seed=1)


@pytest.fixture(scope="session")
def mixture_model():
    target = GaussianMixture1D()
    data = generate_training_data(target, **MIXTURE_TRAINING)
    cfg = TrainConfig(steps=MIXTURE_NET["steps"], seed=MIXTURE_NET["seed"])
    params = train(data, cfg, Architecture(hidden=MIXTURE_NET["hidden"]))
    return GaussianMixture1D(), data, params



def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    summary = dict(item.user_properties).get("summary", "")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    item.config._criteria[mark.args[0]] = (status, summary)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, summary = results[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {summary}")
