import pytest

from critnls.landscape import ModelParams, build_constants


@pytest.fixture(scope="session")
def params():
    return ModelParams(N=3, q=2.5, mu=1.0)


@pytest.fixture(scope="session")
def constants(params):
    return build_constants(params)


@pytest.fixture(scope="session")
def radial_half(params, constants):
    from critnls.ground_state import minimize_local

    return minimize_local(params, constants, 0.5 * constants.c0)


@pytest.fixture(scope="session")
def box_half(params, constants, radial_half):
    """The ``c = c0 / 2`` ground state on the 64^3 box of side 150 used for dynamics."""
    from critnls.field import BoxGrid
    from critnls.ground_state import polish_on_box

    res = polish_on_box(params, constants, radial_half, BoxGrid(3, 64, 150.0))
    assert res.converged
    return res


# --- acceptance verdict lines -------------------------------------------------

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


class Verdict:
    """Collects named sub-checks of one acceptance criterion and reports one line."""

    def __init__(self, log):
        self.log = log
        self.number = None
        self.reported = False

    def __call__(self, number, checks: dict, detail: str = ""):
        self.number = number
        failed = [name for name, ok in checks.items() if not ok]
        line = f"criterion {number}: {'FAIL' if failed else 'PASS'}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        print(line)
        self.log.append(line)
        self.reported = True
        assert not failed, line


@pytest.fixture
def verdict(request):
    v = Verdict(request.config.stash[ACCEPTANCE])
    yield v
    if not v.reported:
        number = request.node.get_closest_marker("criterion").args[0]
        line = f"criterion {number}: FAIL  [raised before reaching a verdict]"
        print(line)
        v.log.append(line)
