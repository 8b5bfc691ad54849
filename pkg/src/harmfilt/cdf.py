"""IEEE Common Data Format (CDF) record I/O.

Fixed-column reader/writer for the bus and branch sections of the classic
exchange format.  Parsing is tolerant of short lines (records are padded
before slicing) and blank numeric fields (read as zero); section layout
errors raise :class:`~harmfilt.errors.CdfParseError` with the line number.

Only the title, bus and branch sections are modeled; zone/interchange/tie
sections are skipped on read and omitted on write.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields

from .errors import CdfParseError

_LINE_WIDTH = 133


@dataclass
class TitleRecord:
    date: str = ""
    originator: str = ""
    mva_base: float = 100.0
    year: int = 0
    season: str = ""
    case_id: str = ""


@dataclass
class BusRecord:
    number: int
    name: str = ""
    area: int = 1
    zone: int = 1
    bus_type: int = 0
    v_final: float = 1.0
    angle_final: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    base_kv: float = 0.0
    v_desired: float = 0.0
    limit_max: float = 0.0
    limit_min: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    remote_bus: int = 0


@dataclass
class BranchRecord:
    from_bus: int
    to_bus: int
    area: int = 1
    zone: int = 1
    circuit: int = 1
    branch_type: int = 0
    r: float = 0.0
    x: float = 0.0
    b: float = 0.0
    rating1: float = 0.0
    rating2: float = 0.0
    rating3: float = 0.0
    control_bus: int = 0
    side: int = 0
    ratio: float = 0.0
    angle: float = 0.0
    min_tap: float = 0.0
    max_tap: float = 0.0
    step: float = 0.0
    limit_min: float = 0.0
    limit_max: float = 0.0


@dataclass
class CdfCase:
    title: TitleRecord
    buses: list[BusRecord]
    branches: list[BranchRecord]


# (attribute, start, stop, kind) with 0-based half-open column ranges.
_BUS_LAYOUT = [
    ("number", 0, 4, int),
    ("name", 5, 17, str),
    ("area", 18, 20, int),
    ("zone", 20, 23, int),
    ("bus_type", 24, 26, int),
    ("v_final", 27, 33, float),
    ("angle_final", 33, 40, float),
    ("p_load", 40, 49, float),
    ("q_load", 49, 59, float),
    ("p_gen", 59, 67, float),
    ("q_gen", 67, 75, float),
    ("base_kv", 76, 83, float),
    ("v_desired", 84, 90, float),
    ("limit_max", 90, 98, float),
    ("limit_min", 98, 106, float),
    ("shunt_g", 106, 114, float),
    ("shunt_b", 114, 122, float),
    ("remote_bus", 123, 127, int),
]

_BRANCH_LAYOUT = [
    ("from_bus", 0, 4, int),
    ("to_bus", 5, 9, int),
    ("area", 10, 12, int),
    ("zone", 12, 15, int),
    ("circuit", 16, 17, int),
    ("branch_type", 18, 19, int),
    ("r", 19, 29, float),
    ("x", 29, 40, float),
    ("b", 40, 50, float),
    ("rating1", 50, 55, float),
    ("rating2", 56, 61, float),
    ("rating3", 62, 67, float),
    ("control_bus", 68, 72, int),
    ("side", 73, 74, int),
    ("ratio", 76, 82, float),
    ("angle", 83, 90, float),
    ("min_tap", 90, 97, float),
    ("max_tap", 97, 104, float),
    ("step", 105, 111, float),
    ("limit_min", 112, 119, float),
    ("limit_max", 119, 126, float),
]


def _convert(raw: str, kind, attr: str, line_no: int):
    raw = raw.strip()
    if kind is str:
        return raw
    if not raw:
        return kind(0)
    try:
        if kind is int:
            # some files right-pad integers with a decimal part
            return int(float(raw))
        return kind(raw)
    except ValueError as exc:
        raise CdfParseError(f"bad value {raw!r} in field {attr}", line_no) from exc


def _parse_record(line: str, layout, cls, line_no: int):
    line = line.rstrip("\n").ljust(_LINE_WIDTH)
    values = {
        attr: _convert(line[a:b], kind, attr, line_no) for attr, a, b, kind in layout
    }
    return cls(**values)


def _is_section_end(line: str) -> bool:
    head = line.strip().split()
    return bool(head) and head[0] in {"-999", "-99", "-9999"}


def read_cdf(stream) -> CdfCase:
    """Parse a CDF text stream into raw records."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("ascii", errors="replace"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    lines = stream.readlines()
    if not lines or not any(ln.strip() for ln in lines):
        raise CdfParseError("empty CDF input", 1)

    title_line = lines[0].rstrip("\n").ljust(_LINE_WIDTH)
    title = TitleRecord(
        date=title_line[1:9].strip(),
        originator=title_line[10:30].strip(),
        mva_base=_convert(title_line[31:37], float, "mva_base", 1),
        year=_convert(title_line[38:42], int, "year", 1),
        season=title_line[43:44].strip(),
        case_id=title_line[45:73].strip(),
    )
    if title.mva_base <= 0:
        raise CdfParseError(f"nonpositive MVA base {title.mva_base}", 1)

    buses: list[BusRecord] = []
    branches: list[BranchRecord] = []
    section = None
    saw_bus_section = False
    for idx, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped:
            continue
        upper = stripped.upper()
        if upper.startswith("BUS DATA FOLLOWS"):
            section = "bus"
            saw_bus_section = True
            continue
        if upper.startswith("BRANCH DATA FOLLOWS"):
            section = "branch"
            continue
        if upper.startswith(("LOSS ZONES FOLLOWS", "INTERCHANGE DATA FOLLOWS",
                             "TIE LINES FOLLOWS")):
            section = None
            continue
        if upper.startswith("END OF DATA"):
            break
        if _is_section_end(line):
            section = None
            continue
        if section == "bus":
            buses.append(_parse_record(line, _BUS_LAYOUT, BusRecord, idx))
        elif section == "branch":
            branches.append(_parse_record(line, _BRANCH_LAYOUT, BranchRecord, idx))

    if not saw_bus_section:
        raise CdfParseError("no BUS DATA FOLLOWS section found")
    if not buses:
        raise CdfParseError("bus section is empty")
    return CdfCase(title=title, buses=buses, branches=branches)


def _fnum(value: float, width: int) -> str:
    """Fixed-width float: densest decimal representation that fits."""
    for prec in range(width - 1, -1, -1):
        text = f"{value:.{prec}f}"
        if len(text) <= width:
            # trim trailing zeros but keep at least one decimal when room
            if "." in text:
                text = text.rstrip("0").rstrip(".") or "0"
            return text.rjust(width)
    return f"{value:.{max(width - 7, 0)}e}".rjust(width)


def _put(buf: list[str], start: int, text: str):
    for i, ch in enumerate(text):
        buf[start + i] = ch


def _format_record(record, layout) -> str:
    buf = [" "] * _LINE_WIDTH
    for attr, a, b, kind in layout:
        value = getattr(record, attr)
        width = b - a
        if kind is str:
            _put(buf, a, str(value)[:width].ljust(width))
        elif kind is int:
            _put(buf, a, str(int(value)).rjust(width)[:width])
        else:
            _put(buf, a, _fnum(float(value), width))
    return "".join(buf).rstrip()


def write_cdf(case: CdfCase) -> str:
    """Serialize records back to CDF text (bus + branch sections only)."""
    t = case.title
    buf = [" "] * _LINE_WIDTH
    _put(buf, 1, t.date[:8].ljust(8))
    _put(buf, 10, t.originator[:20].ljust(20))
    _put(buf, 31, _fnum(t.mva_base, 6))
    _put(buf, 38, str(t.year).rjust(4))
    _put(buf, 43, (t.season or "S")[:1])
    _put(buf, 45, t.case_id[:28].ljust(28))
    out = ["".join(buf).rstrip()]

    out.append(f"BUS DATA FOLLOWS                            {len(case.buses)} ITEMS")
    out.extend(_format_record(r, _BUS_LAYOUT) for r in case.buses)
    out.append("-999")
    out.append(
        f"BRANCH DATA FOLLOWS                         {len(case.branches)} ITEMS"
    )
    out.extend(_format_record(r, _BRANCH_LAYOUT) for r in case.branches)
    out.append("-999")
    out.append("END OF DATA")
    return "\n".join(out) + "\n"


def records_equal(a: CdfCase, b: CdfCase) -> bool:
    """Field-exact equality of two parsed cases (round-trip check)."""
    if fields(a.title) != fields(b.title):
        return False
    if a.title != b.title:
        return False
    return a.buses == b.buses and a.branches == b.branches
