def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines collected by ``test_acceptance.py``."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
