#!/usr/bin/env python3
"""Deterministic stand-in for `vvp sim.out`.

Reads the JSON "executable" left by fake_iverilog, evaluates single-bit
combinational assigns in the DUT against reference assigns in the testbench
over an exhaustive input sweep, writes a real VCD to the $dumpfile path the
instrumented testbench names, and prints a monitor trace plus a
VerilogEval-style sample summary.

Supports Verilog operators ~ & | ^ and parentheses over 1-bit regs.
"""
import itertools
import json
import re
import sys

TICKS_PER_SAMPLE = 10


def parse_assigns(text):
    out = {}
    for m in re.finditer(r"\bassign\s+([A-Za-z_]\w*)\s*=\s*([^;]+);", text):
        out[m.group(1)] = m.group(2).strip()
    return out


def evaluate(expr, env):
    # ~ & | ^ have identical two's-complement semantics in Python, so the
    # expression evaluates directly; the final &1 recovers the single bit.
    try:
        return eval(expr, {"__builtins__": {}}, dict(env)) & 1
    except Exception:
        return None


def main(argv):
    with open(argv[0]) as fh:
        image = json.load(fh)
    dut_text = open(image["dut"]).read()
    tb_text = open(image["tb"]).read()

    m = re.search(r'\$dumpfile\("([^"]+)"\)', tb_text)
    if not m:
        print("fake_vvp: testbench has no $dumpfile directive")
        return 1
    vcd_path = m.group(1)

    inputs = []
    for decl in re.finditer(r"\breg\b([^;]*);", tb_text):
        inputs.extend(re.findall(r"[A-Za-z_]\w*", decl.group(1)))
    dut_assigns = parse_assigns(dut_text)
    ref_assigns = {
        name: expr for name, expr in parse_assigns(tb_text).items() if name.endswith("_ref")
    }
    if not inputs or not dut_assigns or not ref_assigns:
        print("fake_vvp: runtime error: nothing to simulate")
        return 1

    outputs = [name[: -len("_ref")] for name in ref_assigns]
    columns = inputs + [o + "_ref" for o in outputs] + list(outputs)
    codes = {name: chr(33 + i) for i, name in enumerate(columns)}

    vcd = ["$timescale 1ns $end"]
    for name in columns:
        vcd.append(f"$var wire 1 {codes[name]} {name} $end")
    vcd.append("$enddefinitions $end")

    last = {}
    mismatch_samples = 0
    total_samples = 0
    monitor = []

    for sample, combo in enumerate(itertools.product((0, 1), repeat=len(inputs))):
        t = sample * TICKS_PER_SAMPLE
        env = dict(zip(inputs, combo))
        row = dict(env)
        sample_bad = False
        for o in outputs:
            ref = evaluate(ref_assigns[o + "_ref"], env)
            got = evaluate(dut_assigns.get(o, ""), env)
            row[o + "_ref"] = ref
            row[o] = got
            if got != ref:
                sample_bad = True
        total_samples += 1
        if sample_bad:
            mismatch_samples += 1

        vcd.append(f"#{t}")
        if sample == 0:
            vcd.append("$dumpvars")
        for name in columns:
            val = row[name]
            bit = "x" if val is None else str(val)
            if last.get(name) != bit:
                vcd.append(f"{bit}{codes[name]}")
                last[name] = bit
        if sample == 0:
            vcd.append("$end")
        monitor.append(
            "time=%d " % t
            + " ".join(f"{n}={'x' if row[n] is None else row[n]}" for n in columns)
        )

    with open(vcd_path, "w") as fh:
        fh.write("\n".join(vcd) + "\n")

    for line in monitor:
        print(line)
    if mismatch_samples:
        print(f"Mismatches: {mismatch_samples} in {total_samples} samples")
    else:
        print(f"All {total_samples} samples matched.")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
