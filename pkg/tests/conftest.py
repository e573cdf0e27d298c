import numpy as np
import pytest

from riscf.model import ChannelSet, CsiEstimate

ACCEPTANCE_LINES = []


def random_instance(rng, N=2, Nt=2, L=2, M=4, K=2, scale=1.0, radius_frac=0.05):
    """Unit-scale random channels and CSI with radii proportional to the link norms."""
    cn = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)
    ch = ChannelSet(scale * cn(N, K, Nt), cn(L, K, M), scale * cn(N, L, M, Nt), np.ones(K))
    z = ch.cascaded()
    eps_d = radius_frac * np.linalg.norm(ch.direct, axis=2) * rng.random((N, K))
    eps_c = radius_frac * np.linalg.norm(z, axis=(2, 3)) * rng.random((N, K))
    csi = CsiEstimate(ch.direct, z, eps_d, eps_c, np.ones(K))
    return ch, csi


def unit_phases(rng, n):
    return np.exp(2j * np.pi * rng.random(n))


def random_precoders(rng, N, K, Nt):
    return (rng.standard_normal((N, K, Nt)) + 1j * rng.standard_normal((N, K, Nt))) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
