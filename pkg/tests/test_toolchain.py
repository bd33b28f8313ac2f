import sys
from pathlib import Path

import pytest

from pefa import toolchain as tc
from conftest import KMAP_TESTBENCH, KMAP_WRONG, KMAP_RIGHT


# --- extract_rtl ---

def test_extract_fenced_block():
    rtl = tc.extract_rtl("Here is the code:\n```\nmodule top; endmodule\n```")
    assert rtl.text == "module top; endmodule"
    assert rtl.module_names == ("top",)


def test_extract_fence_with_language_tag():
    rtl = tc.extract_rtl(KMAP_WRONG)
    assert rtl.module_names == ("top",)
    assert "assign y = a & b;" in rtl.text
    assert "Here is the module" not in rtl.text


def test_extract_triple_quote_fence():
    rtl = tc.extract_rtl("'''verilog\nmodule m; endmodule\n'''")
    assert rtl.module_names == ("m",)


def test_extract_raw_modules_no_fence():
    raw = "module a; endmodule\nmodule b; endmodule"
    rtl = tc.extract_rtl(raw)
    assert rtl.module_names == ("a", "b")
    assert rtl.text == raw


def test_extract_drops_surrounding_prose():
    rtl = tc.extract_rtl("Sure!\nmodule a; endmodule\nHope this helps.")
    assert rtl.text == "module a; endmodule"


def test_extract_no_rtl():
    with pytest.raises(tc.NoRtlFound):
        tc.extract_rtl("I cannot generate that.")


def test_extract_is_projection():
    for raw in (KMAP_WRONG, "module a; endmodule\nmodule b; endmodule", "x\n```\nmodule c;\nendmodule\n```"):
        once = tc.extract_rtl(raw)
        twice = tc.extract_rtl(once.text)
        assert twice.text == once.text


# --- instrument_testbench ---

def test_instrument_minimal_tb():
    out = tc.instrument_testbench("module tb; initial begin end endmodule", ["a", "y"])
    assert out.text.count("$dumpfile") == 1
    assert out.text.count("$dumpvars") == 1
    assert out.text.count("$monitor") == 1
    assert "a=%b" in out.text and "y=%b" in out.text
    assert out.monitored_signals == ("a", "y")


def test_instrument_without_initial_block():
    out = tc.instrument_testbench("module tb; wire w; endmodule", ["w"])
    assert "$dumpfile" in out.text
    assert out.text.index("$dumpfile") < out.text.index("endmodule")


def test_instrument_preserves_original_bytes():
    src = KMAP_TESTBENCH
    out = tc.instrument_testbench(src, ["a", "b", "y"])
    # removing the injected block restores the original exactly
    start = out.text.index("\n  initial begin\n    $dumpfile")
    end = out.text.index("end\n", out.text.index("$monitor")) + len("end\n")
    assert out.text[:start] + out.text[end:] == src


def test_instrument_rejects_two_modules():
    with pytest.raises(tc.MultipleTestbenchModules):
        tc.instrument_testbench("module a; endmodule\nmodule b; endmodule", ["x"])


def test_instrument_rejects_no_module():
    with pytest.raises(tc.NoModuleFound):
        tc.instrument_testbench("// nothing here", ["x"])


def test_instrument_rejects_already_instrumented():
    once = tc.instrument_testbench("module tb; initial begin end endmodule", ["a"])
    with pytest.raises(tc.AlreadyInstrumented):
        tc.instrument_testbench(once.text, ["a"])


# --- stage runners against the fake tools ---

GOOD_RTL = "module m(input a, output y); assign y = a; endmodule"
BAD_IDENT_RTL = "module m(input a, output y); assign y = undeclared_sig; endmodule"
SYNTAX_BAD_RTL = "module m(input a, output y);\nassign y = a\nendmodule"


def test_lint_ok(toolchain_cfg, tmp_path):
    report = tc.lint(tc.extract_rtl(GOOD_RTL), tmp_path, toolchain_cfg)
    assert report.ok and report.exit_code == 0
    assert report.stage is tc.Stage.LINT


def test_lint_undeclared_identifier(toolchain_cfg, tmp_path):
    report = tc.lint(tc.extract_rtl(BAD_IDENT_RTL), tmp_path, toolchain_cfg)
    assert not report.ok
    assert "undeclared_sig" in report.log


def test_lint_tool_not_found(tmp_path):
    cfg = tc.ToolchainConfig(lint_cmd=("definitely_not_a_linter_xyz",))
    with pytest.raises(tc.ToolNotFound):
        tc.lint(tc.extract_rtl(GOOD_RTL), tmp_path, cfg)


def test_compile_ok_produces_executable(toolchain_cfg, tmp_path):
    rtl = tc.extract_rtl(KMAP_WRONG)
    tb = tc.instrument_testbench(KMAP_TESTBENCH, ["a", "b", "y"])
    report = tc.compile(rtl, tb, tmp_path, toolchain_cfg)
    assert report.ok
    assert (tmp_path / "sim.out").exists()


def test_compile_syntax_error(toolchain_cfg, tmp_path):
    rtl = tc.RtlSource(SYNTAX_BAD_RTL, ("m",))
    tb = tc.instrument_testbench(KMAP_TESTBENCH, ["a", "b", "y"])
    report = tc.compile(rtl, tb, tmp_path, toolchain_cfg)
    assert not report.ok
    assert "error" in report.log


def test_workdir_not_creatable(toolchain_cfg, tmp_path):
    # a path under a regular file can never become a directory
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(tc.WorkdirError):
        tc.lint(tc.extract_rtl(GOOD_RTL), blocker / "sub", toolchain_cfg)


def test_simulate_pass_and_vcd(toolchain_cfg, tmp_path):
    rtl = tc.extract_rtl(KMAP_RIGHT)
    tb = tc.instrument_testbench(KMAP_TESTBENCH, ["a", "b", "y"])
    tc.compile(rtl, tb, tmp_path, toolchain_cfg)
    report = tc.simulate(tmp_path / "sim.out", tmp_path / "dump.vcd", toolchain_cfg)
    assert report.ok
    assert report.vcd_path and Path(report.vcd_path).exists()
    from pefa import vcd as vcdmod

    doc = vcdmod.parse_vcd(Path(report.vcd_path).read_text())
    assert any(s.name == "y_ref" for s in doc.signals)


def test_simulate_wrong_dut_fails_with_monitor_trace(toolchain_cfg, tmp_path):
    rtl = tc.extract_rtl(KMAP_WRONG)
    tb = tc.instrument_testbench(KMAP_TESTBENCH, ["a", "b", "y"])
    tc.compile(rtl, tb, tmp_path, toolchain_cfg)
    report = tc.simulate(tmp_path / "sim.out", tmp_path / "dump.vcd", toolchain_cfg)
    assert not report.ok
    assert "time=" in report.log
    assert "Mismatches" in report.log


def test_simulate_timeout(tmp_path):
    hang = tmp_path / "hang.py"
    hang.write_text("import time\ntime.sleep(60)\n")
    (tmp_path / "sim.out").write_text("{}")
    cfg = tc.ToolchainConfig(sim_cmd=(sys.executable, str(hang)), sim_timeout_s=0.5)
    with pytest.raises(tc.ToolTimeout):
        tc.simulate(tmp_path / "sim.out", tmp_path / "dump.vcd", cfg)


# --- run_pipeline ---

def _tb():
    return tc.instrument_testbench(KMAP_TESTBENCH, ["a", "b", "y"])


def test_pipeline_fail_fast_on_broken_rtl(toolchain_cfg, tmp_path):
    rtl = tc.RtlSource("module m(input a, output y); assign y = nope; endmodule", ("m",))
    report = tc.run_pipeline(rtl, _tb(), tmp_path, toolchain_cfg)
    assert report.stage in (tc.Stage.LINT, tc.Stage.COMPILE)
    assert not report.ok
    assert not (tmp_path / "sim.out").exists()  # later stages never ran


def test_pipeline_compiling_but_wrong(toolchain_cfg, tmp_path):
    report = tc.run_pipeline(tc.extract_rtl(KMAP_WRONG), _tb(), tmp_path, toolchain_cfg)
    assert report.stage is tc.Stage.SIMULATE
    assert not report.ok


def test_pipeline_fully_correct(toolchain_cfg, tmp_path):
    report = tc.run_pipeline(tc.extract_rtl(KMAP_RIGHT), _tb(), tmp_path, toolchain_cfg)
    assert report.stage is tc.Stage.SIMULATE
    assert report.ok
    assert (tmp_path / "stage_lint.log").exists()
    assert (tmp_path / "stage_compile.log").exists()
    assert (tmp_path / "stage_simulate.log").exists()


# --- log scrapers ---

def test_mismatch_count_from_log():
    assert tc.mismatch_count_from_log("Mismatches: 3 in 8 samples") == 3
    assert tc.mismatch_count_from_log("saw 12 mismatches total") == 12
    assert tc.mismatch_count_from_log("all good") is None


def test_pass_counts_from_log():
    assert tc.pass_counts_from_log("Mismatches: 3 in 8 samples") == (5, 8)
    assert tc.pass_counts_from_log("no counters here") is None
