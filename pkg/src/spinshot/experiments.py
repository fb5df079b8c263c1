"""Experiment parameter records and the plain-text catalog format.

The catalog is a hand-editable text file: one ``[name]`` section per
experiment, ``key = value`` lines inside it, ``#`` comments anywhere.
A value may carry a provenance flag in square brackets::

    t_out0 = 13.6e-3  [derived-via-fermi b]

marking how the number was obtained: ``measured`` directly in the
referenced experiment, ``estimated`` from published material, or
``derived-via-fermi`` through the detailed-balance relations.  The
optional trailing letter is a footnote tag carried along verbatim so a
report can trace individual entries back to their source note.

Times are in seconds, frequencies in hertz, magnetic field in tesla,
temperature in kelvin.  Detector levels, noise density and thresholds
share the per-experiment ``signal_unit`` (nA, pA, mV, ...); the math
only ever forms ratios of them, so the unit is display metadata.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .models import (
    DetectorModel,
    DomainError,
    ReadoutPlan,
    TunnelModel,
    ZeemanParams,
    zeeman_to_ratio,
)
from .stc import complete_tunnel_times

__all__ = [
    "ParseError",
    "ValidationError",
    "Provenance",
    "ExperimentRecord",
    "load_experiments",
    "parse_experiments",
    "dump_experiments",
    "save_experiments",
    "find_experiment",
    "bundled_catalog",
    "bundled_data",
]

_KINDS = ("measured", "estimated", "derived-via-fermi")

_TUNNEL_KEYS = ("t_in0", "t_out0", "t_in1", "t_out1", "t1_relax", "ez_over_kbt")
_DETECTOR_KEYS = (
    "mu0",
    "mu1",
    "noise_psd",
    "filter_cutoff",
    "sample_rate",
    "filter_order",
)
_ZEEMAN_KEYS = ("b_field", "g_factor", "temperature")
_PLAN_KEYS = ("readout_time", "threshold")

# Canonical key order for emission; also the complete vocabulary.
_KEY_ORDER = ("signal_unit",) + _DETECTOR_KEYS + _TUNNEL_KEYS + _ZEEMAN_KEYS + _PLAN_KEYS

_REQUIRED = (
    "mu0",
    "mu1",
    "noise_psd",
    "filter_cutoff",
    "sample_rate",
    "t_out1",
    "t1_relax",
    "b_field",
    "g_factor",
    "temperature",
)

_NAME_RE = re.compile(r"[a-z][a-z0-9_]*")
_SECTION_RE = re.compile(r"\s*\[\s*([^\]]*?)\s*\]\s*(?:#.*)?$")
_KEY_RE = re.compile(r"(\s*)([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$")
_FLAG_RE = re.compile(r"\[\s*([a-z][a-z-]*)(?:\s+([a-z]))?\s*\]\s*$")


class ParseError(ValueError):
    """Catalog text that does not follow the format.

    ``line`` and ``column`` are 1-based positions of the offending token.
    """

    def __init__(self, line: int, column: int, message: str) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ValueError):
    """A syntactically fine record that violates a model invariant."""


@dataclass(frozen=True)
class Provenance:
    """How a catalog entry was obtained, plus an optional footnote tag."""

    kind: str
    note: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValidationError(
                f"provenance kind must be one of {_KINDS}, got {self.kind!r}"
            )

    def render(self) -> str:
        return f"[{self.kind} {self.note}]" if self.note else f"[{self.kind}]"


@dataclass(frozen=True)
class ExperimentRecord:
    """One experiment's full parameter set, ready for analysis.

    ``tunnel`` arrives with every derivable field filled in (the loader
    runs the detailed-balance completion), so any operation downstream
    can run without touching the catalog again.  ``readout_time`` and
    ``threshold`` hold the operating point the experiment reported,
    when it reported one.
    """

    name: str
    tunnel: TunnelModel
    detector: DetectorModel
    zeeman: ZeemanParams
    signal_unit: str = "arb"
    readout_time: Optional[float] = None
    threshold: Optional[float] = None
    provenance: Dict[str, Provenance] = dc_field(default_factory=dict)

    def __post_init__(self) -> None:
        if not _NAME_RE.fullmatch(self.name):
            raise ValidationError(
                f"experiment name {self.name!r} must be lowercase [a-z0-9_]"
            )
        for key in self.provenance:
            if key not in _KEY_ORDER:
                raise ValidationError(f"provenance for unknown field {key!r}")
        if self.readout_time is not None and self.readout_time <= 0:
            raise ValidationError(
                f"experiment {self.name!r}: readout_time must be positive"
            )

    @property
    def published_plan(self) -> Optional[ReadoutPlan]:
        """The reported operating point, or None if the experiment did
        not publish both a readout time and a threshold."""
        if self.readout_time is None or self.threshold is None:
            return None
        return ReadoutPlan(self.readout_time, self.threshold)

    def value_of(self, key: str) -> Union[float, int, str, None]:
        if key in _TUNNEL_KEYS:
            return getattr(self.tunnel, key)
        if key in _DETECTOR_KEYS:
            return getattr(self.detector, key)
        if key in _ZEEMAN_KEYS:
            return getattr(self.zeeman, key)
        if key in ("signal_unit",) + _PLAN_KEYS:
            return getattr(self, key)
        raise KeyError(key)


def _strip_comment(text: str) -> str:
    # a comment starts at a '#' that opens the value or follows whitespace
    m = re.search(r"(?:^|\s)#", text)
    return text[: m.start()] if m else text


def _parse_value(
    raw: str, lineno: int, value_col: int
) -> Tuple[str, Optional[Provenance], int]:
    """Split a raw value field into (text, flag, text_column)."""
    body = _strip_comment(raw)
    lead = len(body) - len(body.lstrip())
    text = body.strip()
    col = value_col + lead
    if not text:
        raise ParseError(lineno, value_col, "missing value")
    flag = None
    m = _FLAG_RE.search(text)
    if m:
        kind, note = m.group(1), m.group(2)
        if kind not in _KINDS:
            raise ParseError(
                lineno,
                col + m.start(),
                f"unknown provenance flag {kind!r}; use one of {', '.join(_KINDS)}",
            )
        flag = Provenance(kind, note)
        text = text[: m.start()].strip()
        if not text:
            raise ParseError(lineno, value_col, "flag without a value")
    elif "[" in text:
        raise ParseError(
            lineno, col + text.index("["), "malformed provenance flag"
        )
    return text, flag, col


_Entry = Tuple[Union[float, str], Optional[Provenance], int, int]


def _parse_sections(text: str) -> List[Tuple[str, int, Dict[str, _Entry]]]:
    sections: List[Tuple[str, int, Dict[str, _Entry]]] = []
    seen: Dict[str, int] = {}
    current: Optional[Dict[str, _Entry]] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line.lstrip().startswith("["):
            m = _SECTION_RE.fullmatch(line)
            if not m:
                raise ParseError(
                    lineno, line.index("[") + 1, "malformed section header"
                )
            name = m.group(1)
            col = line.index("[") + 2
            if not _NAME_RE.fullmatch(name):
                raise ParseError(
                    lineno,
                    col,
                    f"experiment name {name!r} must be lowercase [a-z0-9_]",
                )
            if name in seen:
                raise ParseError(
                    lineno,
                    col,
                    f"duplicate experiment {name!r} (first at line {seen[name]})",
                )
            seen[name] = lineno
            current = {}
            sections.append((name, lineno, current))
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ParseError(lineno, 1, "expected 'key = value' or '[section]'")
        key_col = len(m.group(1)) + 1
        key = m.group(2)
        if current is None:
            raise ParseError(
                lineno, key_col, f"key {key!r} appears before any [section]"
            )
        if key not in _KEY_ORDER:
            raise ParseError(lineno, key_col, f"unknown key {key!r}")
        if key in current:
            raise ParseError(
                lineno,
                key_col,
                f"duplicate key {key!r} (first at line {current[key][2]})",
            )
        value_col = m.start(3) + 1
        textval, flag, col = _parse_value(m.group(3), lineno, value_col)
        if key == "signal_unit":
            if flag is not None:
                raise ParseError(
                    lineno, col, "signal_unit takes no provenance flag"
                )
            current[key] = (textval, None, lineno, key_col)
            continue
        try:
            value = float(textval)
        except ValueError:
            raise ParseError(
                lineno, col, f"not a number: {textval!r}"
            ) from None
        current[key] = (value, flag, lineno, key_col)
    return sections


def _build_record(name: str, entries: Dict[str, _Entry]) -> ExperimentRecord:
    values = {k: v[0] for k, v in entries.items()}
    prov = {k: v[1] for k, v in entries.items() if v[1] is not None}

    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ValidationError(
            f"experiment {name!r} is missing required field(s): "
            + ", ".join(missing)
        )

    order = values.get("filter_order", 8)
    if float(order) != int(order):
        raise ValidationError(
            f"experiment {name!r}: filter_order must be an integer, got {order}"
        )

    try:
        tunnel = TunnelModel(
            t_in0=values.get("t_in0"),
            t_out0=values.get("t_out0"),
            t_in1=values.get("t_in1"),
            t_out1=values["t_out1"],
            t1_relax=values["t1_relax"],
            ez_over_kbt=values.get("ez_over_kbt"),
        )
        detector = DetectorModel(
            mu0=values["mu0"],
            mu1=values["mu1"],
            noise_psd=values["noise_psd"],
            filter_cutoff=values["filter_cutoff"],
            sample_rate=values["sample_rate"],
            filter_order=int(order),
        )
        zeeman = ZeemanParams(
            b_field=values["b_field"],
            g_factor=values["g_factor"],
            temperature=values["temperature"],
        )
        if tunnel.ez_over_kbt is None:
            # the ratio exists to drive the detailed-balance relations,
            # so a fill from the Zeeman triple is flagged as derived
            tunnel = tunnel.updated(ez_over_kbt=zeeman_to_ratio(zeeman))
            prov["ez_over_kbt"] = Provenance("derived-via-fermi")
        filled = complete_tunnel_times(tunnel)
        for key in ("t_in0", "t_out0", "t_in1"):
            if getattr(tunnel, key) is None:
                prov[key] = Provenance("derived-via-fermi")
        return ExperimentRecord(
            name=name,
            tunnel=filled,
            detector=detector,
            zeeman=zeeman,
            signal_unit=str(values.get("signal_unit", "arb")),
            readout_time=values.get("readout_time"),
            threshold=values.get("threshold"),
            provenance=prov,
        )
    except DomainError as err:
        raise ValidationError(f"experiment {name!r}: {err}") from err


def parse_experiments(text: str) -> List[ExperimentRecord]:
    """Parse catalog text into records, in file order."""
    return [_build_record(name, entries) for name, _, entries in _parse_sections(text)]


def load_experiments(path: Union[str, Path]) -> List[ExperimentRecord]:
    """Load and validate an experiment catalog file.

    Raises :class:`ParseError` (with line and column) on malformed text
    and :class:`ValidationError` when a record breaks a model invariant.
    An empty catalog is legal but gets a warning.
    """
    text = Path(path).read_text()
    records = parse_experiments(text)
    if not records:
        warnings.warn(f"experiment catalog {path} holds no experiments")
    return records


def find_experiment(records: Sequence[ExperimentRecord], name: str) -> ExperimentRecord:
    """Pick a record by name or raise with the available choices."""
    for rec in records:
        if rec.name == name:
            return rec
    raise ValidationError(
        f"unknown experiment {name!r}; catalog has: "
        + ", ".join(r.name for r in records)
    )


def _format_value(value: Union[float, int, str]) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def dump_experiments(records: Sequence[ExperimentRecord]) -> str:
    """Render records back to catalog text.

    The rendering is canonical (fixed key order, shortest float form)
    and lossless: parsing the output reproduces the records exactly,
    including provenance flags and fields the loader filled in.
    """
    blocks = []
    for rec in records:
        lines = [f"[{rec.name}]"]
        for key in _KEY_ORDER:
            value = rec.value_of(key)
            if value is None:
                continue
            entry = f"{key} = {_format_value(value)}"
            flag = rec.provenance.get(key)
            if flag is not None:
                entry += f"  {flag.render()}"
            lines.append(entry)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def save_experiments(records: Sequence[ExperimentRecord], path: Union[str, Path]) -> None:
    Path(path).write_text(dump_experiments(records))


def bundled_data(filename: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(resources.files(__package__).joinpath("data", filename)))


def bundled_catalog() -> Path:
    """Path of the bundled catalog of published experiments."""
    return bundled_data("experiments.txt")
