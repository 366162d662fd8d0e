"""End user progress reporting"""

from __future__ import annotations

from collections.abc import Iterator
import contextlib
import time

import yaspin.core

from .common import tagged


class Progress:
    """Progress feedback interface"""

    def report(self, text: str, **tags) -> None:  # pragma: no cover
        raise NotImplementedError()

    def tracker(
        self, text: str, total: int
    ) -> contextlib.AbstractContextManager[
        ProgressTracker
    ]:  # pragma: no cover
        raise NotImplementedError()

    @staticmethod
    def dynamic() -> Progress:
        """Progress suitable for interactive terminals"""
        return _DynamicProgress()

    @staticmethod
    def static() -> Progress:
        """Progress suitable for pipes, log captures, etc."""
        return _StaticProgress()


class ProgressTracker:
    """Counts completed units of a batch, e.g. graphs of an experiment"""

    def __init__(self, text: str, total: int) -> None:
        if total < 0:
            raise ValueError(f"Invalid total: {total}")
        self.text = text
        self.total = total
        self.done = 0
        self._started = time.perf_counter()

    def advance(self, text: str, **tags) -> None:
        self.done += 1
        self._show(self.status(text, **tags))

    def status(self, text: str, **tags) -> str:
        elapsed = time.perf_counter() - self._started
        return tagged(
            f"{text} ({self.done}/{self.total})",
            elapsed=f"{elapsed:.1f}s",
            **tags,
        )

    def _show(self, message: str) -> None:  # pragma: no cover
        raise NotImplementedError()


class _DynamicProgress(Progress):
    def __init__(self) -> None:
        self._tracker: _DynamicProgressTracker | None = None

    def report(self, text: str, **tags) -> None:
        message = f"☞ {tagged(text, **tags)}"
        if self._tracker:
            self._tracker.yaspin.write(message)
        else:
            print(message)  # noqa

    @contextlib.contextmanager
    def tracker(self, text: str, total: int) -> Iterator[ProgressTracker]:
        assert not self._tracker
        with yaspin.yaspin(text=f"{text} (0/{total})") as spinner:
            self._tracker = _DynamicProgressTracker(text, total, spinner)
            try:
                yield self._tracker
            except Exception:
                self._tracker.yaspin.fail("✗")
                raise
            else:
                self._tracker.yaspin.ok("✓")
            finally:
                self._tracker = None


class _DynamicProgressTracker(ProgressTracker):
    def __init__(
        self, text: str, total: int, spinner: yaspin.core.Yaspin
    ) -> None:
        super().__init__(text, total)
        self.yaspin = spinner

    def _show(self, message: str) -> None:
        self.yaspin.text = message


class _StaticProgress(Progress):
    def report(self, text: str, **tags) -> None:
        print(tagged(text, **tags))  # noqa

    @contextlib.contextmanager
    def tracker(self, text: str, total: int) -> Iterator[ProgressTracker]:
        self.report(text, total=total)
        yield _StaticProgressTracker(text, total, self)


class _StaticProgressTracker(ProgressTracker):
    def __init__(
        self, text: str, total: int, progress: _StaticProgress
    ) -> None:
        super().__init__(text, total)
        self._progress = progress

    def _show(self, message: str) -> None:
        self._progress.report(message)
