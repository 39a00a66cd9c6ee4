from ttnet import gradcheck


def test_small_suite_passes():
    results = gradcheck.run_suites("small", seed=0)
    assert [r.name for r in results] == ["tt_linear", "tt_lstm_bptt"]
    assert all(r.passed for r in results)


def test_reduced_network_suite():
    r = gradcheck.tensornet_suite(seed=1)
    assert r.passed and r.n_checks == 2


def test_fault_is_detected():
    results = gradcheck.run_suites("small", seed=0, fault=True)
    assert not results[0].passed


def test_report_is_deterministic():
    a = gradcheck.format_report(gradcheck.run_suites("small", seed=3))
    b = gradcheck.format_report(gradcheck.run_suites("small", seed=3))
    assert a == b
    assert a.splitlines()[-1].endswith("PASS")
