"""Dual sliding-window rate budget (requests/minute and tokens/minute).

Both windows must grant before a dispatch happens. Token costs are charged
from pre-dispatch estimates and reconciled against provider-reported usage
afterwards, while the entry is still inside the window. The granting rule
is exact: within any trailing 60-second window, granted requests never
exceed rpm_limit and granted tokens never exceed tpm_limit.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

from .clock import Clock

WINDOW_SECONDS = 60.0


class InfeasibleRequestError(Exception):
    """A single request whose token cost can never fit the budget."""


@dataclass(frozen=True)
class RateBudgetLimits:
    rpm_limit: int
    tpm_limit: int

    def validate(self) -> None:
        if self.rpm_limit < 1 or self.tpm_limit < 1:
            raise ValueError("rate limits must be positive")


@dataclass
class _Entry:
    granted_at: float
    tokens: int
    permit_id: int


class RateBudget:
    """Single shared budget; grants are atomic between awaits."""

    def __init__(self, limits: RateBudgetLimits, clock: Clock, window: float = WINDOW_SECONDS):
        limits.validate()
        self.limits = limits
        self.clock = clock
        self.window = window
        self._entries: deque[_Entry] = deque()
        self._token_sum = 0
        self._permit_ids = itertools.count(1)
        # grant log kept for tests / invariant audits
        self.grant_log: list[tuple[float, int]] = []

    def _prune(self, now: float) -> None:
        horizon = now - self.window
        while self._entries and self._entries[0].granted_at <= horizon:
            entry = self._entries.popleft()
            self._token_sum -= entry.tokens

    def _fits(self, tokens: int) -> bool:
        return (
            len(self._entries) + 1 <= self.limits.rpm_limit
            and self._token_sum + tokens <= self.limits.tpm_limit
        )

    def _next_free_time(self, tokens: int, now: float) -> float:
        """Earliest instant at which the request could fit, given no new grants."""
        wake = now
        entries = list(self._entries)
        count = len(entries)
        token_sum = self._token_sum
        idx = 0
        while count + 1 > self.limits.rpm_limit or token_sum + tokens > self.limits.tpm_limit:
            expiring = entries[idx]
            wake = expiring.granted_at + self.window
            token_sum -= expiring.tokens
            count -= 1
            idx += 1
        return wake

    async def acquire(self, estimated_tokens: int) -> int:
        """Wait for both windows, charge the cost, return a permit id."""
        if estimated_tokens > self.limits.tpm_limit:
            raise InfeasibleRequestError(
                f"request of {estimated_tokens} tokens exceeds tpm_limit "
                f"{self.limits.tpm_limit}"
            )
        while True:
            now = self.clock.now()
            self._prune(now)
            if self._fits(estimated_tokens):
                permit = next(self._permit_ids)
                self._entries.append(_Entry(now, estimated_tokens, permit))
                self._token_sum += estimated_tokens
                self.grant_log.append((now, estimated_tokens))
                return permit
            wake = self._next_free_time(estimated_tokens, now)
            await self.clock.sleep(max(wake - now, 1e-9))

    def reconcile(self, permit: int, actual_tokens: int) -> None:
        """Replace a permit's estimated cost with reported usage.

        Entries already outside the window are left alone; their minute has
        passed and re-charging it would distort the current one.
        """
        for entry in self._entries:
            if entry.permit_id == permit:
                self._token_sum += actual_tokens - entry.tokens
                entry.tokens = actual_tokens
                return


def audit_window(
    grants: list[tuple[float, int]], rpm_limit: int, tpm_limit: int, window: float = WINDOW_SECONDS
) -> list[str]:
    """Independent replay of the window rule over a grant log.

    For every grant time T, counts grants in (T - window, T]. Used by tests
    as the oracle against the budget implementation.
    """
    violations = []
    for i, (t, _) in enumerate(grants):
        in_window = [(gt, gtok) for gt, gtok in grants if t - window < gt <= t]
        count = len(in_window)
        tokens = sum(gtok for _, gtok in in_window)
        if count > rpm_limit:
            violations.append(f"grant {i}: {count} requests in window ending {t}")
        if tokens > tpm_limit:
            violations.append(f"grant {i}: {tokens} tokens in window ending {t}")
    return violations
