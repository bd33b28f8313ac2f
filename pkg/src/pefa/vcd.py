"""Value Change Dump (VCD) parsing, tabular conversion, and mismatch localization.

Covers the four-state subset of IEEE 1364 VCD: scalar and binary-vector
value changes over {0,1,x,z}. Real-valued and FST/LXT traces are out of scope.
"""
from __future__ import annotations

import re
from dataclasses import dataclass


class VcdError(Exception):
    pass


class MalformedHeader(VcdError):
    pass


class UnknownIdCode(VcdError):
    pass


class NonMonotonicTime(VcdError):
    pass


class UnknownColumn(VcdError):
    pass


class WidthMismatch(VcdError):
    pass


class TimeNotFound(VcdError):
    pass


@dataclass(frozen=True)
class VcdSignal:
    id_code: str
    name: str
    width: int


@dataclass(frozen=True)
class VcdChange:
    time: int
    id_code: str
    value: str


@dataclass(frozen=True)
class VcdDocument:
    timescale: tuple[int, str]
    signals: tuple[VcdSignal, ...]
    changes: tuple[VcdChange, ...]

    def signal_by_code(self, id_code: str) -> VcdSignal:
        for sig in self.signals:
            if sig.id_code == id_code:
                return sig
        raise UnknownIdCode(id_code)


@dataclass(frozen=True)
class SignalTable:
    columns: tuple[str, ...]
    widths: tuple[int, ...]
    # each row: (time, values aligned with columns, full declared width)
    rows: tuple[tuple[int, tuple[str, ...]], ...]


@dataclass(frozen=True)
class MismatchReport:
    pairs: tuple[tuple[str, str], ...]
    first_mismatch_time: int | None
    total_mismatches: int
    window: tuple[tuple[int, tuple[str, ...]], ...]


_TIMESCALE_RE = re.compile(r"(\d+)\s*(s|ms|us|ns|ps|fs)")
_SCALAR_RE = re.compile(r"^([01xXzZ])(\S+)$")
_VECTOR_RE = re.compile(r"^[bB]([01xXzZ]+)\s+(\S+)$")

_VALUE_CHARS = set("01xz")


def _expand_value(value: str, width: int) -> str:
    """Left-extend a VCD vector value to its declared width.

    Per IEEE 1364: pad with '0' unless the leftmost bit is x or z, which
    extends itself.
    """
    if len(value) >= width:
        return value
    fill = value[0] if value[0] in "xz" else "0"
    return fill * (width - len(value)) + value


def parse_vcd(text: str) -> VcdDocument:
    """Parse a complete VCD document string.

    The initial ``$dumpvars`` block is recorded as ordinary changes at the
    current timestamp (0 if no ``#`` record preceded it).
    """
    lines = text.splitlines()
    timescale = (1, "ns")
    signals: list[VcdSignal] = []
    scope: list[str] = []
    idx = 0
    saw_enddefinitions = False

    # header section
    while idx < len(lines):
        line = lines[idx].strip()
        idx += 1
        if not line:
            continue
        if line.startswith("$enddefinitions"):
            saw_enddefinitions = True
            break
        if line.startswith("$timescale"):
            # directive body may continue onto following lines up to $end
            body = line[len("$timescale"):]
            while "$end" not in body and idx < len(lines):
                body += " " + lines[idx].strip()
                idx += 1
            m = _TIMESCALE_RE.search(body)
            if m:
                timescale = (int(m.group(1)), m.group(2))
        elif line.startswith("$scope"):
            parts = line.split()
            if len(parts) >= 3:
                scope.append(parts[2])
        elif line.startswith("$upscope"):
            if scope:
                scope.pop()
        elif line.startswith("$var"):
            parts = line.split()
            # $var <type> <width> <id> <name> [range] $end
            if len(parts) < 5:
                raise MalformedHeader(f"bad $var record: {line!r}")
            width = int(parts[2])
            if width < 1:
                raise MalformedHeader(f"non-positive width: {line!r}")
            id_code = parts[3]
            name = parts[4]
            if scope:
                name = ".".join(scope) + "." + name
            signals.append(VcdSignal(id_code, name, width))

    if not saw_enddefinitions:
        raise MalformedHeader("missing $enddefinitions $end")

    by_code = {s.id_code: s for s in signals}
    changes: list[VcdChange] = []
    current_time = 0
    last_time = -1

    def record(id_code: str, value: str) -> None:
        sig = by_code.get(id_code)
        if sig is None:
            raise UnknownIdCode(id_code)
        value = value.lower()
        if not set(value) <= _VALUE_CHARS or len(value) > sig.width:
            raise VcdError(f"bad value {value!r} for {sig.name}")
        changes.append(VcdChange(current_time, id_code, value))

    while idx < len(lines):
        line = lines[idx].strip()
        idx += 1
        if not line:
            continue
        if line.startswith("#"):
            current_time = int(line[1:])
            if current_time < last_time:
                raise NonMonotonicTime(f"time {current_time} after {last_time}")
            last_time = current_time
            continue
        if line.startswith("$"):
            # $dumpvars / $dumpall / $dumpoff / $comment blocks: value lines
            # inside them are handled by the normal branches; the directive
            # and its $end are skipped.
            continue
        m = _SCALAR_RE.match(line)
        if m:
            record(m.group(2), m.group(1))
            continue
        m = _VECTOR_RE.match(line)
        if m:
            record(m.group(2), m.group(1))
            continue
        raise VcdError(f"unrecognized record: {line!r}")

    return VcdDocument(timescale, tuple(signals), tuple(changes))


def serialize_vcd(doc: VcdDocument) -> str:
    """Render a document back to VCD text; parse(serialize(d)) == d."""
    out = [f"$timescale {doc.timescale[0]}{doc.timescale[1]} $end"]
    for sig in doc.signals:
        out.append(f"$var wire {sig.width} {sig.id_code} {sig.name} $end")
    out.append("$enddefinitions $end")
    widths = {s.id_code: s.width for s in doc.signals}
    emitted_time: int | None = None
    for ch in doc.changes:
        if ch.time != emitted_time:
            out.append(f"#{ch.time}")
            emitted_time = ch.time
        if widths[ch.id_code] == 1:
            out.append(f"{ch.value}{ch.id_code}")
        else:
            out.append(f"b{ch.value} {ch.id_code}")
    return "\n".join(out) + "\n"


def to_signal_table(doc: VcdDocument) -> SignalTable:
    """Convert a document to one forward-filled row per distinct change time.

    Cells before a signal's first change hold all-x; column order follows
    declaration order.
    """
    columns = tuple(s.name for s in doc.signals)
    widths = tuple(s.width for s in doc.signals)
    order = {s.id_code: i for i, s in enumerate(doc.signals)}
    current = ["x" * w for w in widths]
    rows: list[tuple[int, tuple[str, ...]]] = []
    i = 0
    n = len(doc.changes)
    while i < n:
        t = doc.changes[i].time
        while i < n and doc.changes[i].time == t:
            ch = doc.changes[i]
            col = order[ch.id_code]
            current[col] = _expand_value(ch.value, widths[col])
            i += 1
        rows.append((t, tuple(current)))
    return SignalTable(columns, widths, tuple(rows))


def default_pairing(columns: tuple[str, ...], suffix: str = "_ref") -> list[tuple[str, str]]:
    """Pair each ``<name><suffix>`` column with its ``<name>`` column."""
    cols = set(columns)
    pairs = []
    for c in columns:
        if c.endswith(suffix) and c[: -len(suffix)] in cols:
            pairs.append((c, c[: -len(suffix)]))
    return pairs


def find_mismatches(
    table: SignalTable,
    pairs: list[tuple[str, str]],
    window_radius: int = 5,
) -> MismatchReport:
    """Scan rows in time order and localize where any ref/observed pair differs.

    Values compare by exact character equality, so x/z differ from 0/1 and
    equal only themselves.
    """
    index = {name: i for i, name in enumerate(table.columns)}
    resolved: list[tuple[int, int]] = []
    for ref, obs in pairs:
        if ref not in index:
            raise UnknownColumn(ref)
        if obs not in index:
            raise UnknownColumn(obs)
        ri, oi = index[ref], index[obs]
        if table.widths[ri] != table.widths[oi]:
            raise WidthMismatch(f"{ref} ({table.widths[ri]}) vs {obs} ({table.widths[oi]})")
        resolved.append((ri, oi))

    first_time: int | None = None
    total = 0
    for t, values in table.rows:
        if any(values[ri] != values[oi] for ri, oi in resolved):
            total += 1
            if first_time is None:
                first_time = t

    window: tuple[tuple[int, tuple[str, ...]], ...] = ()
    if first_time is not None:
        window = tuple(extract_window(table, first_time, window_radius))
    return MismatchReport(tuple(pairs), first_time, total, window)


def extract_window(table: SignalTable, center_time: int, radius: int) -> list[tuple[int, tuple[str, ...]]]:
    """Up to 2*radius+1 contiguous rows centered on the row at center_time."""
    center = None
    for i, (t, _) in enumerate(table.rows):
        if t == center_time:
            center = i
            break
    if center is None:
        raise TimeNotFound(str(center_time))
    lo = max(0, center - radius)
    hi = min(len(table.rows), center + radius + 1)
    return list(table.rows[lo:hi])


def render_table(columns: tuple[str, ...], rows) -> str:
    """Fixed-width plain-text rendering: header row, then one row per timestamp."""
    headers = ("time",) + tuple(columns)
    cells = [[str(t)] + list(values) for t, values in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def to_csv(columns: tuple[str, ...], rows) -> str:
    """Comma-separated rendering with a header row."""
    lines = [",".join(("time",) + tuple(columns))]
    for t, values in rows:
        lines.append(",".join([str(t)] + list(values)))
    return "\n".join(lines) + "\n"
