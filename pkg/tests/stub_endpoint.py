"""Local chat-completion stub answering the standard prompt families deterministically."""
import hashlib
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def _unit(text):
    return int(hashlib.sha256(text.encode()).hexdigest()[:8], 16) / 0xFFFFFFFF


def answer(prompt):
    """A plausible reply for each prompt family, keyed on the prompt text."""
    u = round(0.05 + 0.9 * _unit(prompt.split("IMPORTANT")[0] if "IMPORTANT" in prompt else prompt), 2)
    if "Can decide" in prompt:
        return f"Can decide: {'Yes' if u > 0.3 else 'No'}\nDecision: {'Yes' if u > 0.5 else 'No'}"
    m = re.search(r"Use these labels in this order: \[(.*)\]", prompt)
    labels = [s.strip() for s in m.group(1).split(",")]
    if labels == ["No", "Yes"]:
        return f"No: {1 - u:.2f}\nYes: {u:.2f}"
    share = 1.0 / len(labels)
    return "\n".join(f"{lab}: {share:.4f}" for lab in labels)


class StubServer:
    """``fail_first`` transient 503s, then answers; ``garbage`` substrings get unparseable replies."""

    def __init__(self, fail_first=0, garbage=(), status=None):
        self.requests = []
        self.fail_first = fail_first
        self.garbage = tuple(garbage)
        self.status = status
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with outer._lock:
                    outer.requests.append({"body": body, "auth": self.headers.get("Authorization")})
                    count = len(outer.requests)
                if outer.status is not None:
                    return self._send(outer.status, {"error": "forbidden"})
                if count <= outer.fail_first:
                    return self._send(503, {"error": "busy"})
                prompt = body["messages"][0]["content"]
                text = "I cannot answer that." if any(g in prompt for g in outer.garbage) else answer(prompt)
                self._send(200, {"choices": [{"message": {"role": "assistant", "content": text}}]})

            def _send(self, code, obj):
                data = json.dumps(obj).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
