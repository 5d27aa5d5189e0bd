"""
Local HTTP server that replays recorded fixtures.

Fixture mode points every remote endpoint (code-hosting API, search engine,
crawled sites, trackers, crawl index and archive) at one instance of this
server. Files are served from a directory tree:

    /github/search/repositories?q=...  ->  <root>/github/search/repositories(.json)
    /site/                             ->  <root>/site/index.html
    /cc-data/crawl/mini.warc.gz        ->  <root>/cc-data/crawl/mini.warc.gz  (Range honored)

Query strings are ignored when mapping to files. `{{ fixture_url }}` inside
.json and .html files is replaced with the server's base URL, so recorded
responses can link back to the server whatever port it runs on. Tests can also
register dynamic routes that see the query string.
"""

import mimetypes
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import parse_qs, unquote, urlsplit

from rich.console import Console

console = Console(stderr=True)

TEMPLATED_SUFFIXES = {".json", ".html", ".htm"}
RANGE_HEADER = re.compile(r"bytes=(\d+)-(\d*)$")

Route = Callable[[dict[str, list[str]]], tuple[int, dict[str, str], bytes]]


class FixtureServer:
    """Threaded fixture server. Use as a context manager or call start()/stop()."""

    def __init__(self, root: Path | None = None, port: int = 0, stall: float = 0.0,
                 routes: dict[str, Route] | None = None):
        self.root = Path(root) if root else None
        self.stall = stall
        self.routes: dict[str, Route] = dict(routes or {})
        self.requests: list[tuple[float, str]] = []
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), self._handler_class())
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def route(self, path: str, handler: Route) -> None:
        self.routes[path] = handler

    def hits(self, path_prefix: str = "") -> list[tuple[float, str]]:
        with self._lock:
            return [r for r in self.requests if r[1].startswith(path_prefix)]

    def start(self) -> "FixtureServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        console.print(f"[dim]Fixture server on {self.url}[/dim]")
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "FixtureServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _record(self, path: str) -> None:
        with self._lock:
            self.requests.append((time.monotonic(), path))

    def _resolve(self, path: str) -> Path | None:
        if self.root is None:
            return None
        relative = unquote(path).lstrip("/")
        candidate = (self.root / relative).resolve()
        if not candidate.is_relative_to(self.root.resolve()):
            return None
        options = [candidate / "index.html"] if candidate.is_dir() else [candidate]
        options.append(candidate.with_name(candidate.name + ".json"))
        for option in options:
            if option.is_file():
                return option
        return None

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, format, *args):
                pass

            def do_HEAD(self):
                self._serve(send_body=False)

            def do_GET(self):
                self._serve(send_body=True)

            def _serve(self, send_body: bool):
                parts = urlsplit(self.path)
                server._record(parts.path)
                if server.stall:
                    time.sleep(server.stall)

                if parts.path in server.routes:
                    status, headers, body = server.routes[parts.path](parse_qs(parts.query))
                    self._send(status, headers, body, send_body)
                    return

                path = server._resolve(parts.path)
                if path is None:
                    self._send(404, {"Content-Type": "text/plain"}, b"not found", send_body)
                    return

                body = path.read_bytes()
                if path.suffix in TEMPLATED_SUFFIXES:
                    body = body.replace(b"{{ fixture_url }}", server.url.encode())
                content_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
                headers = {"Content-Type": content_type, "Accept-Ranges": "bytes"}

                match = RANGE_HEADER.match(self.headers.get("Range", "").strip())
                if match:
                    start = int(match.group(1))
                    end = int(match.group(2)) if match.group(2) else len(body) - 1
                    if start >= len(body):
                        self._send(416, {"Content-Range": f"bytes */{len(body)}"}, b"", send_body)
                        return
                    end = min(end, len(body) - 1)
                    headers["Content-Range"] = f"bytes {start}-{end}/{len(body)}"
                    self._send(206, headers, body[start:end + 1], send_body)
                    return
                self._send(200, headers, body, send_body)

            def _send(self, status: int, headers: dict[str, str], body: bytes, send_body: bool):
                try:
                    self.send_response(status)
                    for name, value in headers.items():
                        self.send_header(name, value)
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    if send_body:
                        self.wfile.write(body)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        return Handler
