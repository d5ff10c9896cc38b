import threading

import pytest

from privlift.orchestrator.framing import PipeChannel


def run_pair(f0, f1, name="t"):
    """Run two party functions on the ends of one pipe; returns both results or raises the first error."""
    a, b = PipeChannel.pair(name)
    res = [None, None]
    errs = [None, None]

    def work(i, f, ch):
        try:
            res[i] = f(ch)
        except BaseException as exc:  # noqa: BLE001
            errs[i] = exc
            ch.close()

    ts = [threading.Thread(target=work, args=(0, f0, a)), threading.Thread(target=work, args=(1, f1, b))]
    for t in ts:
        t.start()
    for t in ts:
        t.join(120)
    for e in errs:
        if e is not None:
            raise e
    return res


@pytest.fixture
def pair():
    return run_pair


@pytest.fixture
def free_port():
    """A base port with a few free ports above it."""
    import socket

    for _ in range(50):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            base = s.getsockname()[1]
        if base + 16 < 65535 and _ports_free(base, 16):
            return base
    pytest.skip("no free port range")


def _ports_free(base, n):
    import socket

    for p in range(base, base + n):
        with socket.socket() as s:
            try:
                s.bind(("127.0.0.1", p))
            except OSError:
                return False
    return True
