import numpy as np
import pytest

from runoff.inference import PosteriorSamples, SamplerConfig
from runoff.model import Layout


def samples_from_states(spec, states, chains=1):
    """Wrap explicit parameter states as a posterior sample set."""
    lay = Layout(spec)
    n = len(states)
    return PosteriorSamples(
        spec=spec,
        config=SamplerConfig(chains=chains, iterations=n // chains + 1, burn_in=1, thin=1),
        chain=np.repeat(np.arange(chains), n // chains),
        iteration=np.tile(np.arange(n // chains), chains),
        theta=np.stack([lay.pack(s) for s in states]),
        tau=np.stack([s.precisions() for s in states]),
        phi=np.array([s.phi for s in states], dtype=float),
    )


@pytest.fixture
def make_samples():
    return samples_from_states


_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture
def report(request):
    """Print a ``criterion N: PASS|FAIL ...`` line now and again in the terminal summary."""
    lines = request.config.stash[_REPORT_KEY]

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
