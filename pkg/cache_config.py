"""Shared HTTP session configuration for API and download requests."""

from pathlib import Path

import requests
import requests_cache
from requests.adapters import HTTPAdapter

CACHE_DIR = Path(__file__).parent / ".cache"
USER_AGENT = "seedforge/1.0 (fuzzing seed corpus builder)"


def get_cached_session(expire_after: int = 86400, cache_dir: Path = CACHE_DIR,
                       user_agent: str = USER_AGENT) -> requests_cache.CachedSession:
    """Get a cached session for search/index API calls. Default expiry: 24 hours."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    session = requests_cache.CachedSession(
        cache_name=str(cache_dir / "api_cache"),
        backend="sqlite",
        expire_after=expire_after,
        allowable_codes=(200,),
    )
    session.headers["User-Agent"] = user_agent
    return session


def get_session(user_agent: str = USER_AGENT, pool_size: int = 10) -> requests.Session:
    """Get a plain session for page fetches and file downloads."""
    session = requests.Session()
    session.headers["User-Agent"] = user_agent
    adapter = HTTPAdapter(pool_connections=pool_size, pool_maxsize=pool_size)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


def get_api_session(use_cache: bool, expire_after: int = 86400, cache_dir: Path = CACHE_DIR,
                    user_agent: str = USER_AGENT) -> requests.Session:
    if use_cache:
        return get_cached_session(expire_after, cache_dir, user_agent)
    return get_session(user_agent)
