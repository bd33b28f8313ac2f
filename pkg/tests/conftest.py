import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from pefa.toolchain import ToolchainConfig

FIXTURES = Path(__file__).parent / "fixtures"
TOOLS = FIXTURES / "tools"


def stub_toolchain_config() -> ToolchainConfig:
    """Pipeline config driving the deterministic fake lint/compile/simulate
    tools instead of verilator/iverilog/vvp."""
    return ToolchainConfig(
        lint_cmd=(sys.executable, str(TOOLS / "fake_verilator.py")),
        compile_cmd=(sys.executable, str(TOOLS / "fake_iverilog.py")),
        sim_cmd=(sys.executable, str(TOOLS / "fake_vvp.py")),
        lint_timeout_s=30.0,
        compile_timeout_s=30.0,
        sim_timeout_s=30.0,
    )


@pytest.fixture
def toolchain_cfg():
    return stub_toolchain_config()


class ScriptedOpenAIServer:
    """Local OpenAI-compatible endpoint returning scripted completions.

    Each entry is (completion_text, prompt_tokens, completion_tokens) or a
    dict {"status": 429} style error to inject. Entries are consumed in
    request order; requests past the script get a canned refusal.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        self.auth_headers = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length).decode()
                with server._lock:
                    server.requests.append(json.loads(body))
                    server.auth_headers.append(self.headers.get("Authorization"))
                    entry = server.script.pop(0) if server.script else ("I cannot help.", 1, 1)
                if isinstance(entry, dict) and "status" in entry:
                    self.send_response(entry["status"])
                    self.end_headers()
                    self.wfile.write(b"{}")
                    return
                if isinstance(entry, dict):
                    payload = {
                        "choices": [{"message": {"role": "assistant", "content": entry["text"]}}]
                    }
                    if not entry.get("omit_usage"):
                        payload["usage"] = entry.get("usage", {"prompt_tokens": 1, "completion_tokens": 1})
                else:
                    text, p, c = entry
                    payload = {
                        "choices": [{"message": {"role": "assistant", "content": text}}],
                        "usage": {"prompt_tokens": p, "completion_tokens": c},
                    }
                data = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def base_url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


# Karnaugh-map style problem: y = a ^ b. The first candidate below compiles
# but implements AND; the corrected one implements XOR.
KMAP_PROMPT = (
    "Implement module top(input a, input b, output y) whose output follows "
    "this Karnaugh map: y is 1 exactly when a and b differ."
)

KMAP_TESTBENCH = """\
module tb;
  reg a, b;
  wire y;
  wire y_ref;
  top dut(.a(a), .b(b), .y(y));
  assign y_ref = a ^ b;
  initial begin
    a = 0; b = 0;
    #10 a = 0; b = 1;
    #10 a = 1; b = 0;
    #10 a = 1; b = 1;
    #10 $finish;
  end
endmodule
"""

KMAP_WRONG = """\
Here is the module:
```verilog
module top(input a, input b, output y);
  assign y = a & b;
endmodule
```
"""

KMAP_RIGHT = """\
Corrected per the mismatch table:
```verilog
module top(input a, input b, output y);
  assign y = a ^ b;
endmodule
```
"""

KMAP_BROKEN = """\
```verilog
module top(input a, input b, output y);
  assign y = a ^ b
endmodule
```
"""

KMAP_PORTS = ("a", "b", "y")


def kmap_problem():
    from pefa.harness import DesignProblem, Subset

    return DesignProblem(
        id="kmap_xor",
        prompt=KMAP_PROMPT,
        testbench=KMAP_TESTBENCH,
        subset=Subset.SPEC_TO_RTL,
        dut_ports=KMAP_PORTS,
    )
