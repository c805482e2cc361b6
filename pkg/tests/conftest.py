import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_run():
    """The standard toy experiment, trained once per session."""
    from beatdet.config import RunConfig
    from beatdet.toy import ToyHeads, build_examples, train_toy

    cfg = RunConfig()
    t0 = time.perf_counter()
    train = build_examples(cfg.corpus.specs("train"), cfg.level)
    val = build_examples(cfg.corpus.specs("val"), cfg.level)
    test = build_examples(cfg.corpus.specs("test"), cfg.level)
    heads = ToyHeads.init(cfg.level, seed=cfg.seed)
    trained, log = train_toy(train, heads, cfg.train, cfg.loss, val, cfg.decode)
    elapsed = time.perf_counter() - t0
    return {"cfg": cfg, "elapsed": elapsed, "train": train, "val": val, "test": test, "heads": trained, "log": log}


def beat_times_strategy():
    from hypothesis import strategies as st

    return st.lists(st.floats(0.01, 2.0), min_size=1, max_size=40).map(
        lambda gaps: np.round(np.cumsum(gaps), 6)
    )


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager factory that records one PASS/FAIL line per acceptance criterion."""
    from contextlib import contextmanager

    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def check(name):
        info: dict = {}
        try:
            yield info
        except BaseException as e:
            lines.append(f"FAIL  {name}  {_fmt_info(info)}  ({type(e).__name__}: {e})".replace("\n", " "))
            print(lines[-1])
            raise
        lines.append(f"PASS  {name}  {_fmt_info(info)}")
        print(lines[-1])

    return check


def _fmt_info(info: dict) -> str:
    return " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
