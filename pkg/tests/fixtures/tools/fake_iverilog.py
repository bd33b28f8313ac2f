#!/usr/bin/env python3
"""Deterministic stand-in for `iverilog -o out dut.v tb.v`.

Checks each source for balanced module/endmodule and terminated assigns,
then writes a JSON "executable" pointing at the sources for fake_vvp.
"""
import json
import os
import re
import sys


def check(path):
    text = open(path).read()
    path = os.path.basename(path)
    errors = []
    if len(re.findall(r"\bmodule\b", text)) != len(re.findall(r"\bendmodule\b", text)):
        errors.append(f"{path}: error: unbalanced module/endmodule")
    if "syntax_error" in text:
        errors.append(f"{path}: error: syntax error")
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("assign") and not stripped.endswith(";"):
            errors.append(f"{path}: error: missing semicolon in assign")
    return errors


def main(argv):
    out = None
    files = []
    i = 0
    while i < len(argv):
        if argv[i] == "-o":
            out = argv[i + 1]
            i += 2
            continue
        if not argv[i].startswith("-"):
            files.append(argv[i])
        i += 1
    if out is None or len(files) < 2:
        print("usage: fake_iverilog -o <out> <dut.v> <tb.v>")
        return 2

    errors = []
    for f in files:
        errors.extend(check(f))
    if errors:
        for e in errors:
            print(e)
        return 1

    with open(out, "w") as fh:
        json.dump({"dut": files[0], "tb": files[1]}, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
