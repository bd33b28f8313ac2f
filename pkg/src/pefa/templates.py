"""Versioned prompt templates. Changing any string here changes experiment
behavior, so bump TEMPLATE_VERSION whenever one is edited."""

TEMPLATE_VERSION = 1

SYSTEM_PROMPT = (
    "You are a Verilog RTL designer. Respond with complete synthesizable "
    "Verilog inside a fenced code block."
)

FEEDBACK_PROMPT = "{feedback}\nFix the module accordingly. Return the full corrected module."

EXTRACTION_FAILURE_FEEDBACK = (
    "Your previous reply contained no Verilog module. Respond with a complete "
    "module inside a fenced code block."
)

SYNTAX_SUMMARY_PROMPT = (
    "Summarize the following Verilog lint/compile error log in a few short "
    "lines, keeping file/line references and the root cause:\n\n{log}"
)

SIM_LOG_SUMMARY_PROMPT = (
    "Summarize the following Verilog simulation failure log in a few short "
    "lines, focusing on which outputs are wrong and when:\n\n{log}"
)

RUN_SUMMARY_PROMPT = (
    "Summarize the following RTL generation session for the user in a short "
    "paragraph, stating clearly whether it succeeded and what the remaining "
    "issues are:\n\n{history}"
)
