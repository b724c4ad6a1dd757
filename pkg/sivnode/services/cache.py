"""
Redis cache for experiment summaries.

Summaries are pure functions of (subcommand, config, seed, shots,
temperature), so they can be served from the cache as long as the key
covers all of them. Falls back to no-op when Redis is unavailable.
"""

import json
import logging
import os
from typing import Any, Optional

logger = logging.getLogger(__name__)

CACHE_TTL_SECONDS = 86400  # 24 hours
RESULT_PREFIX = "sivnode:result:"


def result_key(subcommand: str, config_hash: str, seed: int, shots: Optional[int], temperature: Optional[float]) -> str:
    shots_part = "default" if shots is None else str(int(shots))
    temp_part = "default" if temperature is None else repr(float(temperature))
    return f"{RESULT_PREFIX}{subcommand}:{config_hash}:{int(seed)}:{shots_part}:{temp_part}"


class RedisCacheBackend:
    """Redis-backed result cache. Implements CacheBackend protocol."""

    def __init__(self, redis_url: Optional[str] = None) -> None:
        self._redis_url = redis_url or os.environ.get("REDIS_URL", "redis://localhost:6379/0")
        self._client = None

    def _get_client(self):
        """Lazy Redis client. Returns None if Redis unavailable."""
        if self._client is not None:
            return self._client
        url = (self._redis_url or "").strip()
        if not url or url.lower() in ("false", "none", "0"):
            return None
        try:
            import redis

            self._client = redis.from_url(url, decode_responses=True)
            self._client.ping()
            return self._client
        except Exception as e:
            logger.warning("Redis unavailable, caching disabled: %s", e)
            return None

    def is_available(self) -> bool:
        return self._get_client() is not None

    def get_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int] = None,
        temperature: Optional[float] = None,
    ) -> Optional[dict[str, Any]]:
        """Get a cached summary. Returns None on miss."""
        r = self._get_client()
        if r is None:
            return None
        key = result_key(subcommand, config_hash, seed, shots, temperature)
        try:
            raw = r.get(key)
            if raw is None:
                return None
            return json.loads(raw)
        except Exception as e:
            logger.debug("Cache get failed for %s: %s", key, e)
            return None

    def set_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int],
        temperature: Optional[float],
        summary: dict[str, Any],
    ) -> None:
        r = self._get_client()
        if r is None:
            return
        key = result_key(subcommand, config_hash, seed, shots, temperature)
        try:
            r.set(key, json.dumps(summary, sort_keys=True), ex=CACHE_TTL_SECONDS)
        except Exception as e:
            logger.debug("Cache set failed for %s: %s", key, e)


class NoOpCacheBackend:
    """No-op cache for tests or when Redis is disabled. Implements CacheBackend protocol."""

    def is_available(self) -> bool:
        return False

    def get_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int] = None,
        temperature: Optional[float] = None,
    ) -> Optional[dict[str, Any]]:
        return None

    def set_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int],
        temperature: Optional[float],
        summary: dict[str, Any],
    ) -> None:
        pass
