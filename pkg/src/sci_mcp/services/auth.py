"""Locally-trusted token service.

Models the pattern of keeping authorization next to the user: a credential
can mint a grant for the scopes it is allowed, and a live grant can be
escalated to additional scopes without re-entering the credential. Scopes
follow ``<service>:<read|write|admin>``. Expiry is measured on the sim
clock, so authorization behavior replays deterministically.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass

from ..errors import ToolFailure
from .clock import SimClock

_SCOPE_RE = re.compile(r"^[a-z0-9_]+:(read|write|admin)$")

DEFAULT_TTL_TICKS = 100_000


def validate_scope(scope: str) -> str:
    if not isinstance(scope, str) or not _SCOPE_RE.match(scope):
        raise ToolFailure("INVALID_SCOPE", f"scopes look like service:action, got {scope!r}")
    return scope


@dataclass(frozen=True)
class Credential:
    user_id: str
    secret: str
    allowed_scopes: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AuthGrant:
    token: str
    user_id: str
    scopes: frozenset[str]
    expiry: int


class TokenService:
    def __init__(self, clock: SimClock, ttl_ticks: int = DEFAULT_TTL_TICKS):
        self.clock = clock
        self.ttl_ticks = ttl_ticks
        self._credentials: dict[str, Credential] = {}
        self._grants: dict[str, AuthGrant] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def add_credential(self, credential: Credential) -> None:
        for scope in credential.allowed_scopes:
            validate_scope(scope)
        self._credentials[credential.user_id] = credential

    def _mint(self, user_id: str, scopes: frozenset[str]) -> AuthGrant:
        with self._lock:
            self._counter += 1
            grant = AuthGrant(
                token=f"tok-{self._counter:06d}",
                user_id=user_id,
                scopes=scopes,
                expiry=self.clock.now + self.ttl_ticks,
            )
            self._grants[grant.token] = grant
            return grant

    def acquire(self, user_id: str, secret: str, scopes=()) -> AuthGrant:
        credential = self._credentials.get(user_id)
        if credential is None or credential.secret != secret:
            raise ToolFailure("BAD_CREDENTIAL", f"unknown user or wrong secret for {user_id!r}")
        wanted = frozenset(validate_scope(s) for s in scopes)
        refused = wanted - credential.allowed_scopes
        if refused:
            raise ToolFailure(
                "SCOPE_NOT_ALLOWED",
                f"user {user_id!r} may not hold scopes {sorted(refused)}",
            )
        return self._mint(user_id, wanted)

    def grant_of(self, token: str) -> AuthGrant:
        grant = self._grants.get(token)
        if grant is None:
            raise ToolFailure("BAD_CREDENTIAL", "unknown token")
        if self.clock.now >= grant.expiry:
            raise ToolFailure("EXPIRED_GRANT", f"grant for {grant.user_id!r} expired")
        return grant

    def check(self, token: str, required_scope: str) -> bool:
        """Pure membership test: allow iff the grant is live and holds the
        scope. Never mutates state."""
        grant = self._grants.get(token)
        if grant is None or self.clock.now >= grant.expiry:
            return False
        return required_scope in grant.scopes

    def escalate(self, token: str, extra_scope: str) -> AuthGrant:
        """A superset-scope grant for the same user, without re-entering
        the credential."""
        grant = self.grant_of(token)
        extra = validate_scope(extra_scope)
        credential = self._credentials[grant.user_id]
        if extra not in credential.allowed_scopes:
            raise ToolFailure(
                "SCOPE_NOT_ALLOWED",
                f"user {grant.user_id!r} may not hold scope {extra!r}",
            )
        return self._mint(grant.user_id, grant.scopes | {extra})
