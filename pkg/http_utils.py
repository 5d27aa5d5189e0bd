"""Wall-clock budgets, size-capped downloads and retry policies shared by the modules."""

import threading
import time
from typing import Callable

import requests
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, stop_any, wait_exponential

from exceptions import BudgetExhausted, OversizeResponse

CHUNK_SIZE = 64 * 1024
DEFAULT_TIMEOUT = 30.0
MIN_TIMEOUT = 0.5


class Budget:
    """Cooperative wall-clock budget for one module.

    Workers call `check()` at fetch boundaries; the orchestrator's watchdog
    calls `cancel()` when the hard deadline (budget + grace) passes.
    """

    def __init__(self, seconds: float, clock=time.monotonic):
        if seconds <= 0:
            raise ValueError("Budget must be positive")
        self.seconds = seconds
        self._clock = clock
        self._deadline = clock() + seconds
        self._cancelled = threading.Event()

    @classmethod
    def unlimited(cls) -> "Budget":
        return cls(float("inf"))

    def remaining(self) -> float:
        if self._cancelled.is_set():
            return 0.0
        return max(0.0, self._deadline - self._clock())

    def expired(self) -> bool:
        return self.remaining() <= 0

    def check(self) -> None:
        if self.expired():
            raise BudgetExhausted("Module budget exhausted")

    def cancel(self) -> None:
        self._cancelled.set()

    @property
    def cancelled(self) -> bool:
        return self._cancelled.is_set()

    def timeout(self, default: float = DEFAULT_TIMEOUT) -> float:
        """Per-request timeout that never outlives the budget by much."""
        return max(MIN_TIMEOUT, min(default, self.remaining() + MIN_TIMEOUT))

    def sleep(self, seconds: float) -> None:
        """Sleep, waking early if the budget is cancelled."""
        self._cancelled.wait(min(seconds, self.remaining()))


def stop_when_budget_expired(budget: Budget):
    def _stop(retry_state) -> bool:
        return budget.expired()
    return _stop


def wait_honoring_retry_after(backoff: float, max_wait: float):
    """Exponential backoff, stretched to a server's Retry-After hint when it is longer."""
    exponential = wait_exponential(multiplier=backoff, max=max_wait)

    def _wait(retry_state) -> float:
        delay = exponential(retry_state)
        error = retry_state.outcome.exception() if retry_state.outcome else None
        hint = getattr(error, "retry_after", None)
        if hint:
            delay = max(delay, min(float(hint), max_wait))
        return delay
    return _wait


def retrying(exceptions, attempts: int, backoff: float, budget: Budget | None = None,
             max_wait: float = 60.0) -> Retrying:
    """Exponential-backoff retry policy that also gives up when the budget runs out."""
    stops = [stop_after_attempt(attempts)]
    if budget is not None:
        stops.append(stop_when_budget_expired(budget))
    return Retrying(
        retry=retry_if_exception_type(exceptions),
        stop=stop_any(*stops),
        wait=wait_honoring_retry_after(backoff, max_wait),
        sleep=budget.sleep if budget is not None else time.sleep,
        reraise=True,
    )


def read_capped(response: requests.Response, max_bytes: int, budget: Budget | None = None,
                accept_head: Callable[[bytes], bool] | None = None, head_length: int = 0) -> bytes | None:
    """Read a streamed response body, aborting once it grows past max_bytes.

    With `accept_head`, only the first `head_length` bytes are read before it is
    consulted; a rejected head closes the response and returns None.
    """
    declared = response.headers.get("Content-Length")
    if declared and declared.isdigit() and int(declared) > max_bytes:
        response.close()
        raise OversizeResponse(f"{response.url}: declared {declared} bytes > {max_bytes}")

    chunks = []
    total = 0
    try:
        if accept_head is not None:
            while total < head_length:
                chunk = response.raw.read(head_length - total, decode_content=True)
                if not chunk:
                    break
                total = _append_chunk(chunks, chunk, total, response, max_bytes, budget)
            if not accept_head(b"".join(chunks)):
                return None
        for chunk in response.iter_content(CHUNK_SIZE):
            total = _append_chunk(chunks, chunk, total, response, max_bytes, budget)
    finally:
        response.close()
    return b"".join(chunks)


def _append_chunk(chunks: list[bytes], chunk: bytes, total: int, response: requests.Response,
                  max_bytes: int, budget: Budget | None) -> int:
    if budget is not None:
        budget.check()
    total += len(chunk)
    if total > max_bytes:
        raise OversizeResponse(f"{response.url}: more than {max_bytes} bytes")
    chunks.append(chunk)
    return total


def retry_after_seconds(response: requests.Response) -> float | None:
    """Seconds the server asked us to wait, from Retry-After or X-RateLimit-Reset."""
    retry_after = response.headers.get("Retry-After", "").strip()
    if retry_after.isdigit():
        return float(retry_after)
    reset = response.headers.get("X-RateLimit-Reset", "").strip()
    if reset.isdigit():
        return max(0.0, int(reset) - time.time())
    return None
