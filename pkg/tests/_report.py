"""One summary line per acceptance criterion, printed at the end of the run."""
import contextlib
import time

RESULTS: dict[int, tuple[bool, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record pass/fail for ``number``; an exception or failed assert counts as fail."""
    note = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield note
    except BaseException:
        RESULTS[number] = (False, f"{title}: {note['detail']} ({time.perf_counter() - t0:.1f}s)")
        raise
    RESULTS[number] = (True, f"{title}: {note['detail']} ({time.perf_counter() - t0:.1f}s)")


def lines() -> list[str]:
    return [f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text}" for n, (ok, text) in sorted(RESULTS.items())]
