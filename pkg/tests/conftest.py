import sys
import pathlib

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from vscluster.hashchain import Vin  # noqa: E402
from vscluster.rng import Xoshiro256  # noqa: E402

VIN_ALPHABET = "ABCDEFGHJKLMNPRSTUVWXYZ0123456789"

_ACCEPTANCE: list = []


@pytest.fixture
def acceptance_record():
    def record(number: int, title: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((number, title, passed, detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}  {detail}")


def random_vin(rng: Xoshiro256) -> Vin:
    return Vin("".join(VIN_ALPHABET[rng.randbelow(len(VIN_ALPHABET))] for _ in range(17)))


@pytest.fixture
def rng():
    return Xoshiro256(20240601)
