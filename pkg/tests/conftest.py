import numpy as np
import pytest

from steercompose import imageio


@pytest.fixture
def cli_inputs(tmp_path):
    """Background, object, masks and prompt files for an 8x8 composition."""
    rng = np.random.default_rng(0)
    m_obj = np.zeros((8, 8), bool)
    m_obj[3:5, 3:5] = True
    m_fg = np.zeros((8, 8), bool)
    m_fg[2:6, 2:6] = True
    paths = {
        "background": tmp_path / "bg.png",
        "object": tmp_path / "obj.ppm",
        "obj_mask": tmp_path / "obj_mask.pgm",
        "fg_mask": tmp_path / "fg_mask.pgm",
        "prompt": tmp_path / "prompt.txt",
    }
    imageio.write_image(paths["background"], rng.random((8, 8, 3)))
    imageio.write_image(paths["object"], rng.random((2, 2, 3)))
    imageio.write_mask(paths["obj_mask"], m_obj)
    imageio.write_mask(paths["fg_mask"], m_fg)
    paths["prompt"].write_text("a <ref> red circle <ref> on a blue background\n", encoding="utf-8")
    return paths


def compose_argv(paths, out, *extra):
    return ["compose", "--background", str(paths["background"]), "--object", str(paths["object"]),
            "--obj-mask", str(paths["obj_mask"]), "--fg-mask", str(paths["fg_mask"]),
            "--prompt", str(paths["prompt"]), "--out", str(out), "--set", "widths=8,16", "--set", "d_ctx=8",
            *extra]


# -- acceptance reporting ---------------------------------------------------

CRITERIA = {
    1: "background preservation",
    2: "RCA confinement",
    3: "infusion normalization",
    4: "solver fidelity",
    5: "forward-noising statistics",
    6: "extended CFG algebra",
    7: "efficiency ledger",
    8: "determinism",
    9: "prompt parsing",
    10: "saliency",
}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(marker.args[0], []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = _outcomes.get(n)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {name:<28} {status}")
