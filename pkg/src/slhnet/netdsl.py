"""Plain-text network description language (``.slh`` files).

Example::

    # beam splitter with a cavity in the loop
    component bs {
      inputs = 2;
      S = [[0.6, 0.8], [0.8, -0.6]];
    }
    component cav {
      oscillators = 1;
      C = [[1.4142135623730951]];
      Omega = 0;
    }
    connect bs.out[1] -> cav.in[0];
    connect cav.out[0] -> bs.in[1];
    external bs.out[0], bs.in[0];

Channels are numbered by component in declaration order, then by port
index. Each component gets its own slow factor labelled by its name.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .operators import HilbertSpace
from .slh import SLH, OscillatorModel, concatenate, concatenate_models, feedback, feedback_reduce_model

Complex = complex
Matrix = tuple[tuple[complex, ...], ...]
Value = Union[Complex, Matrix]

SHAPE_KEYS = ("dim", "oscillators", "inputs")
BLOCK_KEYS = ("S", "C", "G", "A", "Z", "X", "R", "L", "H", "Omega", "Gamma", "Theta")
KEYS = SHAPE_KEYS + BLOCK_KEYS
SLH_KEYS = {"L", "H"}
BLOCK_FORM_KEYS = {"A", "Z", "X", "R"}
HAMILTONIAN_KEYS = {"Omega", "Gamma", "Theta"}
OSCILLATOR_KEYS = {"C", "G"}


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class ParseError(ValueError):
    """Raised with every diagnostic collected for the source."""

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------------------
# spec objects


@dataclass(frozen=True)
class Port:
    component: str
    direction: str  # "out" | "in"
    index: int

    def __str__(self) -> str:
        return f"{self.component}.{self.direction}[{self.index}]"


@dataclass(frozen=True)
class ComponentDecl:
    name: str
    fields: tuple[tuple[str, Value], ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def get(self, key: str, default=None):
        for k, v in self.fields:
            if k == key:
                return v
        return default

    @property
    def keys(self) -> set[str]:
        return {k for k, _ in self.fields}

    @property
    def form(self) -> str:
        """``slh``, ``blocks`` or ``hamiltonian``."""
        keys = self.keys
        if keys & SLH_KEYS:
            return "slh"
        if keys & BLOCK_FORM_KEYS:
            return "blocks"
        if keys & (HAMILTONIAN_KEYS | OSCILLATOR_KEYS) or self.oscillators:
            return "hamiltonian"
        return "slh"

    @property
    def kind(self) -> str:
        return "slh" if self.form == "slh" else "oscillator"

    @property
    def dim(self) -> int:
        return int(self.get("dim", 1).real)

    @property
    def oscillators(self) -> int:
        return int(self.get("oscillators", 0).real)

    @property
    def inputs(self) -> int:
        n = self.get("inputs")
        if n is not None:
            return int(n.real)
        d = self.dim
        for key in ("S", "L", "C", "G"):
            val = self.get(key)
            if isinstance(val, tuple):
                return max(1, len(val) // d)
        return 1


@dataclass(frozen=True)
class Connection:
    source: Port
    sink: Port
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class NetworkSpec:
    components: tuple[ComponentDecl, ...] = ()
    connections: tuple[Connection, ...] = ()
    externals: tuple[Port, ...] | None = None

    def component(self, name: str) -> ComponentDecl:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]


# ---------------------------------------------------------------------------
# lexer

_FLOAT = r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("NL", r"\n"),
    ("COMMENT", r"#[^\n]*"),
    ("ARROW", r"->"),
    ("COMPLEX", rf"[+-]?{_FLOAT}[+-]{_FLOAT}i(?![A-Za-z0-9_])"),
    ("NUMBER", rf"[+-]?{_FLOAT}(?![A-Za-z_])"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[{}\[\];=,.]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _TOKEN_SPEC))
_COMPLEX_RE = re.compile(rf"([+-]?{_FLOAT})([+-]{_FLOAT})i")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        mt = _TOKEN_RE.match(source, pos)
        if mt is None:
            raise ParseError([ParseDiagnostic(line, pos - line_start + 1,
                                              f"unexpected character {source[pos]!r}")])
        kind, text = mt.lastgroup, mt.group()
        if kind == "NL":
            line, line_start = line + 1, mt.end()
        elif kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = mt.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def _complex_value(tok: Token) -> complex:
    if tok.kind == "NUMBER":
        return complex(float(tok.text), 0.0)
    mt = _COMPLEX_RE.fullmatch(tok.text)
    return complex(float(mt.group(1)), float(mt.group(2)))


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        raise ParseError([ParseDiagnostic(tok.line, tok.column, f"{message}, found {found}")])

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind not in ("PUNCT", "IDENT", "ARROW"):
            self.error(f"expected {text!r}")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "IDENT":
            self.error(f"expected {what}")
        return self.advance()

    def integer(self) -> int:
        tok = self.tok
        if tok.kind != "NUMBER" or not tok.text.isdigit():
            self.error("expected a nonnegative integer")
        self.advance()
        return int(tok.text)

    def network(self):
        comps, conns, externals = [], [], []
        while self.tok.kind != "EOF":
            tok = self.tok
            if tok.kind == "IDENT" and tok.text == "component":
                comps.append(self.component())
            elif tok.kind == "IDENT" and tok.text == "connect":
                conns.append(self.connection())
            elif tok.kind == "IDENT" and tok.text == "external":
                externals.append(self.external())
            else:
                self.error("expected 'component', 'connect' or 'external'")
        return comps, conns, externals

    def component(self) -> ComponentDecl:
        start = self.advance()
        name = self.ident("component name").text
        self.expect("{")
        fields = []
        while not (self.tok.kind == "PUNCT" and self.tok.text == "}"):
            key_tok = self.tok
            if key_tok.kind != "IDENT" or key_tok.text not in KEYS:
                self.error(f"expected a field name ({', '.join(KEYS)}) or '}}'")
            self.advance()
            self.expect("=")
            value = self.value()
            self.expect(";")
            fields.append((key_tok, value))
        self.expect("}")
        return start, name, fields

    def value(self) -> Value:
        if self.tok.kind in ("NUMBER", "COMPLEX"):
            return _complex_value(self.advance())
        if self.tok.kind == "PUNCT" and self.tok.text == "[":
            self.advance()
            rows = [self.row()]
            while self.tok.kind == "PUNCT" and self.tok.text == ",":
                self.advance()
                rows.append(self.row())
            self.expect("]")
            return tuple(rows)
        self.error("expected a number or a matrix")

    def row(self) -> tuple[complex, ...]:
        self.expect("[")
        entries = [self.scalar()]
        while self.tok.kind == "PUNCT" and self.tok.text == ",":
            self.advance()
            entries.append(self.scalar())
        self.expect("]")
        return tuple(entries)

    def scalar(self) -> complex:
        if self.tok.kind not in ("NUMBER", "COMPLEX"):
            self.error("expected a complex number")
        return _complex_value(self.advance())

    def port(self, direction: str | None = None) -> tuple[Port, Token]:
        name_tok = self.ident("component name")
        self.expect(".")
        dir_tok = self.tok
        if dir_tok.kind != "IDENT" or dir_tok.text not in ("out", "in"):
            self.error("expected 'out' or 'in'")
        if direction is not None and dir_tok.text != direction:
            role = "source" if direction == "out" else "sink"
            self.error(f"expected '{direction}' ({role} of a connection must be an {direction}put port)")
        self.advance()
        self.expect("[")
        idx = self.integer()
        self.expect("]")
        return Port(name_tok.text, dir_tok.text, idx), name_tok

    def connection(self):
        start = self.advance()
        src, _ = self.port("out")
        self.expect("->")
        dst, _ = self.port("in")
        self.expect(";")
        return Connection(src, dst, start.line, start.column)

    def external(self):
        start = self.advance()
        ports = [self.port()[0]]
        while self.tok.kind == "PUNCT" and self.tok.text == ",":
            self.advance()
            ports.append(self.port()[0])
        self.expect(";")
        return start, ports


def _matrix_shape(value: Value) -> tuple[int, int]:
    return (len(value), len(value[0])) if isinstance(value, tuple) else (1, 1)


def _expected_shapes(n: int, m: int, d: int) -> dict[str, tuple[int, int]]:
    return {"S": (n * d, n * d), "C": (n * d, m * d), "G": (n * d, d), "L": (n * d, d),
            "A": (m * d, m * d), "Omega": (m * d, m * d), "Z": (m * d, d), "Gamma": (m * d, d),
            "X": (d, m * d), "R": (d, d), "Theta": (d, d), "H": (d, d)}


def _check_component(decl: ComponentDecl, key_tokens: dict[str, Token], diags: list[ParseDiagnostic]):
    def err(key, msg):
        tok = key_tokens.get(key)
        line, col = (tok.line, tok.column) if tok else (decl.line, decl.column)
        diags.append(ParseDiagnostic(line, col, f"component {decl.name!r}: {msg}"))

    for key in SHAPE_KEYS:
        val = decl.get(key)
        if val is None:
            continue
        if isinstance(val, tuple) or val.imag != 0 or val.real != int(val.real) or val.real < 0:
            err(key, f"{key} must be a nonnegative integer")
            return
        if key != "oscillators" and val.real < 1:
            err(key, f"{key} must be at least 1")
            return
    keys = decl.keys
    if keys & SLH_KEYS and keys & (BLOCK_FORM_KEYS | HAMILTONIAN_KEYS | OSCILLATOR_KEYS):
        bad = sorted(keys & (BLOCK_FORM_KEYS | HAMILTONIAN_KEYS | OSCILLATOR_KEYS))
        err(bad[0], "mixes (L, H) with oscillator blocks " + ", ".join(bad))
        return
    if keys & BLOCK_FORM_KEYS and keys & HAMILTONIAN_KEYS:
        bad = sorted(keys & HAMILTONIAN_KEYS)
        err(bad[0], "mixes (A, Z, X, R) with Hamiltonian data " + ", ".join(bad))
        return
    if decl.form == "slh" and decl.oscillators:
        err("oscillators", "an (S, L, H) component cannot have oscillators")
        return
    n, m, d = decl.inputs, decl.oscillators, decl.dim
    shapes = _expected_shapes(n, m, d)
    for key, val in decl.fields:
        if key in SHAPE_KEYS:
            continue
        if isinstance(val, tuple):
            widths = {len(r) for r in val}
            if len(widths) != 1:
                err(key, f"{key} has rows of different lengths")
                continue
            if _matrix_shape(val) != shapes[key]:
                err(key, f"{key} must be {shapes[key][0]}x{shapes[key][1]}, got "
                         f"{_matrix_shape(val)[0]}x{_matrix_shape(val)[1]}")
        elif val != 0 and shapes[key][0] != shapes[key][1]:
            err(key, f"a nonzero scalar {key} needs a square shape, but {key} is "
                     f"{shapes[key][0]}x{shapes[key][1]}")


def parse(source: str) -> NetworkSpec:
    """Parse and check ``source``; raises :class:`ParseError` carrying diagnostics."""
    parser = _Parser(tokenize(source))
    raw_comps, raw_conns, raw_ext = parser.network()
    diags: list[ParseDiagnostic] = []

    comps, seen = [], {}
    for start, name, fields in raw_comps:
        if name in seen:
            diags.append(ParseDiagnostic(start.line, start.column, f"duplicate component {name!r}"))
            continue
        key_tokens, values = {}, []
        for tok, val in fields:
            if tok.text in key_tokens:
                diags.append(ParseDiagnostic(tok.line, tok.column, f"duplicate field {tok.text!r} in {name!r}"))
                continue
            key_tokens[tok.text] = tok
            values.append((tok.text, val))
        decl = ComponentDecl(name, tuple(values), start.line, start.column)
        _check_component(decl, key_tokens, diags)
        seen[name] = decl
        comps.append(decl)

    def check_port(port: Port, line: int, col: int) -> bool:
        decl = seen.get(port.component)
        if decl is None:
            diags.append(ParseDiagnostic(line, col, f"unknown component {port.component!r}"))
            return False
        if port.index >= decl.inputs:
            diags.append(ParseDiagnostic(line, col, f"port {port} does not exist "
                                                    f"({port.component!r} has {decl.inputs} channels)"))
            return False
        return True

    used: dict[Port, tuple[int, int]] = {}

    def use(port: Port, line: int, col: int):
        if port in used:
            first = used[port]
            diags.append(ParseDiagnostic(line, col, f"port {port} is already used (line {first[0]})"))
        else:
            used[port] = (line, col)

    for conn in raw_conns:
        ok = check_port(conn.source, conn.line, conn.column) & check_port(conn.sink, conn.line, conn.column)
        if ok:
            use(conn.source, conn.line, conn.column)
            use(conn.sink, conn.line, conn.column)

    externals = None
    if len(raw_ext) > 1:
        start = raw_ext[1][0]
        diags.append(ParseDiagnostic(start.line, start.column, "only one 'external' statement is allowed"))
    if raw_ext:
        start, ports = raw_ext[0]
        for port in ports:
            if check_port(port, start.line, start.column):
                use(port, start.line, start.column)
        externals = tuple(ports)
        if not diags:
            for decl in comps:
                for direction in ("out", "in"):
                    for idx in range(decl.inputs):
                        port = Port(decl.name, direction, idx)
                        if port not in used:
                            diags.append(ParseDiagnostic(start.line, start.column,
                                                         f"port {port} is neither connected nor external"))
    if diags:
        raise ParseError(diags)
    return NetworkSpec(tuple(comps), tuple(raw_conns), externals)


def parse_file(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------------------
# canonical printer


def format_complex(z: complex) -> str:
    re_part, im_part = float(z.real), float(z.imag)
    if not (math.isfinite(re_part) and math.isfinite(im_part)):
        raise ValueError("non-finite numbers cannot be written")
    if im_part == 0 and math.copysign(1.0, im_part) > 0:
        return repr(re_part)
    sign = "-" if math.copysign(1.0, im_part) < 0 else "+"
    return f"{re_part!r}{sign}{abs(im_part)!r}i"


def _format_value(value: Value) -> str:
    if isinstance(value, tuple):
        return "[" + ", ".join("[" + ", ".join(format_complex(z) for z in row) + "]" for row in value) + "]"
    return format_complex(value)


def _format_shape_value(value: complex) -> str:
    return str(int(value.real))


def dumps(spec: NetworkSpec) -> str:
    """Canonical text: fields in a fixed order, floats via ``repr``, two-space indent."""
    out = []
    for decl in spec.components:
        out.append(f"component {decl.name} {{")
        for key in KEYS:
            val = decl.get(key)
            if val is None:
                continue
            text = _format_shape_value(val) if key in SHAPE_KEYS else _format_value(val)
            out.append(f"  {key} = {text};")
        out.append("}")
    for conn in spec.connections:
        out.append(f"connect {conn.source} -> {conn.sink};")
    if spec.externals is not None:
        out.append("external " + ", ".join(str(p) for p in spec.externals) + ";")
    return "\n".join(out) + ("\n" if out else "")


def canonicalize(spec: NetworkSpec) -> NetworkSpec:
    """Field order normalized as the printer writes it."""
    comps = tuple(ComponentDecl(c.name, tuple((k, c.get(k)) for k in KEYS if c.get(k) is not None),
                                c.line, c.column) for c in spec.components)
    return NetworkSpec(comps, spec.connections, spec.externals)


# ---------------------------------------------------------------------------
# compiler


def _block(decl: ComponentDecl, key: str, shape: tuple[int, int]) -> np.ndarray:
    val = decl.get(key)
    if val is None:
        return np.eye(shape[0], dtype=complex) if key == "S" else np.zeros(shape, dtype=complex)
    if isinstance(val, tuple):
        return np.array(val, dtype=complex).reshape(shape)
    if val == 0:
        return np.zeros(shape, dtype=complex)
    return val * np.eye(shape[0], dtype=complex)


def component_model(decl: ComponentDecl) -> OscillatorModel:
    """The component as an oscillator model on its own factor (``m = 0`` for an (S, L, H) component)."""
    n, m, d = decl.inputs, decl.oscillators, decl.dim
    space = HilbertSpace.of((decl.name, d)) if d > 1 else HilbertSpace(())
    shapes = _expected_shapes(n, m, d)
    b = {key: _block(decl, key, shape) for key, shape in shapes.items()}
    form = decl.form
    if form == "slh":
        return OscillatorModel.from_slh(SLH.from_hamiltonian(b["S"], b["L"], b["H"], space))
    if form == "hamiltonian":
        return OscillatorModel.from_hamiltonian(b["S"], b["C"], b["G"], b["Omega"], b["Gamma"],
                                                b["Theta"], space)
    return OscillatorModel(b["S"], b["C"], b["G"], b["A"], b["Z"], b["X"], b["R"], space)


@dataclass
class CompiledNetwork:
    """Open-loop model plus the channel bookkeeping needed for feedback."""

    model: OscillatorModel
    components: list[OscillatorModel]
    names: list[str]
    offsets: dict[str, int]
    connections: list[tuple[int, int]]
    externals: tuple[list[int], list[int]]

    @property
    def channel_map(self) -> list[tuple[str, int]]:
        """``(component, port index)`` for each open-loop channel."""
        out = []
        for name, comp in zip(self.names, self.components):
            out += [(name, j) for j in range(comp.n)]
        return out

    @property
    def has_oscillators(self) -> bool:
        return self.model.m > 0

    def open_loop_triple(self) -> SLH:
        if self.has_oscillators:
            raise ValueError("network has oscillators; use .model")
        return SLH(self.model.S, self.model.G, self.model.R, self.model.space)

    def reduce(self, *, check: bool = True):
        """Feedback-reduced network: an :class:`OscillatorModel`, or an :class:`SLH` without oscillators."""
        if not self.has_oscillators:
            t = self.open_loop_triple()
            return feedback(t, self.connections, self.externals, check=check) if self.connections else t
        return feedback_reduce_model(self.model, self.connections, self.externals, check=check)


def compile_network(spec: NetworkSpec) -> CompiledNetwork:
    if not spec.components:
        raise ValueError("network has no components")
    models = [component_model(c) for c in spec.components]
    names = [c.name for c in spec.components]
    offsets, total = {}, 0
    for name, mdl in zip(names, models):
        offsets[name] = total
        total += mdl.n
    glob = lambda p: offsets[p.component] + p.index  # noqa: E731
    connections = [(glob(c.source), glob(c.sink)) for c in spec.connections]
    if spec.externals is not None:
        ext_out = [glob(p) for p in spec.externals if p.direction == "out"]
        ext_in = [glob(p) for p in spec.externals if p.direction == "in"]
    else:
        ext_out = [c for c in range(total) if c not in {o for o, _ in connections}]
        ext_in = [c for c in range(total) if c not in {i for _, i in connections}]
    model = models[0] if len(models) == 1 else concatenate_models(models)
    return CompiledNetwork(model, models, names, offsets, connections, (ext_out, ext_in))


def compile_source(source: str) -> CompiledNetwork:
    return compile_network(parse(source))


def open_loop_slh(compiled: CompiledNetwork) -> SLH:
    """Concatenation of the components as triples (oscillator components must have ``m = 0``)."""
    return concatenate([SLH(c.S, c.G, c.R, c.space) for c in compiled.components])
