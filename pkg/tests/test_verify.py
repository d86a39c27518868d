import pytest

from precond_dls import verify as suite


def test_default_suite_passes():
    results = suite.run_suite(seed=0)
    assert [r.name for r in results if not r.passed] == []
    assert all(r.line().startswith("[PASS]") for r in results)


@pytest.mark.parametrize("seed", range(1, 10))
def test_suite_robust_across_seeds(seed):
    results = suite.run_suite(seed=seed, count=20)
    assert [r.line() for r in results if not r.passed] == []


def test_injected_fault_is_caught():
    results = {r.name: r for r in suite.run_suite(seed=0, count=10, rho_star_k=suite.FAULTS["rho_star_k"])}
    assert not results["rho_star_k_consistency"].passed
    assert not results["rho_star_k_decreasing_in_beta"].passed
    assert results["preconditioned_spectrum"].passed
