import numpy as np
import pytest

from attx.data import SyntheticSpec, generate_synthetic
from attx.model import ModelSpec, StreamConfig
from attx.preprocess import build_dataset


def tiny_spec(attx=None, **kw):
    sc = StreamConfig(widths=(4, 8, 8), kernel_size=5, strides=(4, 2, 2), stage4_width=8)
    return ModelSpec(ecg=sc, eda=StreamConfig(**sc.__dict__), attx=attx, **kw)


@pytest.fixture(scope="session")
def separable_windows():
    """Two subjects where both modalities carry the class (56 windows)."""
    spec = SyntheticSpec(n_subjects=2, duration_s=150, block_s=20, cross_modal_mode="redundant", seed=0)
    return build_dataset(generate_synthetic(spec))


@pytest.fixture(scope="session")
def tiny_windows():
    """Three short subjects, enough for LOSO smoke runs."""
    spec = SyntheticSpec(n_subjects=3, duration_s=60, block_s=15, cross_modal_mode="complementary", seed=3)
    w = build_dataset(generate_synthetic(spec))
    assert len({x.subject_id for x in w}) == 3
    assert len(np.unique([int(x.label) for x in w])) == 2
    return w


# --- acceptance report --------------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.skipped or rep.failed):
        return
    status = "SKIP" if rep.skipped else ("FAIL" if rep.failed else "PASS")
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    item.config._criteria.setdefault(mark.args, []).append((status, details))


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), runs in sorted(crit.items()):
        states = {s for s, _ in runs}
        status = "FAIL" if "FAIL" in states else ("PASS" if "PASS" in states else "SKIP")
        detail = "; ".join(d for _, ds in runs for d in ds)
        terminalreporter.write_line(f"criterion {n}: {status} {title}" + (f"  [{detail}]" if detail else ""))
