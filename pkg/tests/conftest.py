import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

import pytest  # noqa: E402

from relay_ldpc.channel import RelayChannelParams, solve_optimal_alpha  # noqa: E402
from relay_ldpc.codegen import build_two_level_code  # noqa: E402
from relay_ldpc.exitchart import DegreeDistribution  # noqa: E402
from relay_ldpc.optimizer import (DesignCharts, DesignSpec, backoff_design,  # noqa: E402
                                  optimize_single, optimize_two_level)

REF_PARAMS = RelayChannelParams(4.0, 1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def ref_channel():
    split, targets, snrs = solve_optimal_alpha(REF_PARAMS)
    return REF_PARAMS, split, snrs


@pytest.fixture(scope="session")
def small_backoff(ref_channel):
    """Reduced-size design (degrees up to 12, coarse grid) backed off by 15%."""
    params, split, snr = ref_channel
    DD = DegreeDistribution
    spec = DesignSpec(snr.snr1, snr.snr2, snr.snr3, DD.regular(12), DD.regular(12),
                      DD.regular(5), max_var_degree=12, n_points=60)
    charts = DesignCharts(spec)
    lam3, r0 = optimize_single(spec, charts)
    d = optimize_two_level(spec, r0, lam3, mu_grid=6, r_tol=1e-3, charts=charts)
    b = backoff_design(spec, d, 0.85, charts)
    b.meta.update({"channel": params.to_dict(), "alpha": split.alpha})
    return b


@pytest.fixture(scope="session")
def small_code(small_backoff):
    return build_two_level_code(small_backoff, 1024, 7)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
