import pytest

import helpers



@pytest.fixture(scope="session")
def osc_design():
    return helpers.oscillator_design()


@pytest.fixture(scope="session")
def osc_run(osc_design):
    from cloudsync.engine import SimConfig, simulate

    dyn, g, cert = osc_design
    cfg = SimConfig(dyn, g, cert, helpers.OSC_X0, horizon=8.0)
    traj, summary = simulate(cfg)
    return cfg, traj, summary


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in helpers.ACCEPTANCE:
            terminalreporter.write_line(line)
