"""Switched wire lattice: coil programs, path legality and coil geometry.

The lattice has ``n_horizontal_wires`` rows on one metal layer and
``n_vertical_wires`` columns on the other, with one transmission-gate switch
at every intersection. Nodes are addressed ``(row, col)``; cells are the
``(n_h - 1) x (n_v - 1)`` squares between wires, cell ``(r, c)`` lying between
rows ``r, r + 1`` and columns ``c, c + 1``.

Conductor model used by :func:`compile_coil`: on every wire the closed
switches (plus any terminal attached to that wire) are sorted and joined in
consecutive pairs. A closed switch is therefore the end of one horizontal and
one vertical run, i.e. a corner of the coil, and wires pass over unused
intersections on their own layer.

Winding numbers are signed, positive for a counter-clockwise loop in the
``(x, y) = (col, row)`` plane.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Node = tuple[int, int]
Rect = tuple[int, int, int, int]  # cell rows [r0, r1), cell cols [c0, c1)

N_SENSORS = 16


class LatticeError(ValueError):
    """A coil program or path that cannot be realised on the lattice."""

    def __init__(self, message: str, node: Node | None = None):
        self.node = node
        if node is not None:
            message = f"{message} at node {node}"
        super().__init__(message)


class NotAPath(LatticeError):
    """Dangling or branching conductor, or a stray closed switch."""


class IllegalCrossing(LatticeError):
    """A node reused with a turn, or crossed while its switch is closed."""


class OpenCircuit(LatticeError):
    """The two terminals are not connected through the conductor."""


class IndexOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    n_horizontal_wires: int = 36
    n_vertical_wires: int = 36
    segment_length: float = 16.0  # um
    wire_width: float = 1.0  # um
    switch_resistance: float = 34.0  # ohm
    segment_resistance: float = 0.5  # ohm per segment
    preset_side: int = 11  # cells
    preset_stride: int = 8  # cells

    def __post_init__(self):
        if self.n_horizontal_wires < 2 or self.n_vertical_wires < 2:
            raise ValueError("lattice needs at least two wires per layer")
        for name in ("segment_length", "wire_width", "switch_resistance", "segment_resistance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_switches(self) -> int:
        return self.n_horizontal_wires * self.n_vertical_wires

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.n_horizontal_wires - 1, self.n_vertical_wires - 1)

    def contains(self, node: Node) -> bool:
        r, c = node
        return 0 <= r < self.n_horizontal_wires and 0 <= c < self.n_vertical_wires


@dataclass(frozen=True, eq=False)
class SwitchBitmap:
    """Closed (True) / open (False) state of every intersection switch."""

    closed: np.ndarray

    def __post_init__(self):
        arr = np.array(self.closed, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "closed", arr)

    @classmethod
    def empty(cls, spec: LatticeSpec) -> "SwitchBitmap":
        return cls(np.zeros((spec.n_horizontal_wires, spec.n_vertical_wires), dtype=bool))

    @classmethod
    def from_nodes(cls, nodes: Iterable[Node], spec: LatticeSpec) -> "SwitchBitmap":
        arr = np.zeros((spec.n_horizontal_wires, spec.n_vertical_wires), dtype=bool)
        for r, c in nodes:
            if not spec.contains((r, c)):
                raise LatticeError("switch outside the lattice", (r, c))
            arr[r, c] = True
        return cls(arr)

    def nodes(self) -> list[Node]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.closed))]

    def __eq__(self, other):
        if not isinstance(other, SwitchBitmap):
            return NotImplemented
        return self.closed.shape == other.closed.shape and bool(np.all(self.closed == other.closed))

    def __hash__(self):
        return hash((self.closed.shape, self.closed.tobytes()))

    def check(self, spec: LatticeSpec) -> None:
        if self.closed.shape != (spec.n_horizontal_wires, spec.n_vertical_wires):
            raise ValueError(
                f"bitmap shape {self.closed.shape} does not match lattice "
                f"{spec.n_horizontal_wires}x{spec.n_vertical_wires}"
            )


@dataclass(frozen=True, eq=False)
class CoilGeometry:
    path: tuple[Node, ...]
    terminals: tuple[Node, Node]
    turns: int
    winding_map: np.ndarray
    resistance: float
    n_switches: int
    n_segments: int

    def __eq__(self, other):
        if not isinstance(other, CoilGeometry):
            return NotImplemented
        return (
            self.path == other.path
            and self.terminals == other.terminals
            and self.turns == other.turns
            and np.array_equal(self.winding_map, other.winding_map)
            and self.resistance == other.resistance
        )

    def __hash__(self):
        return hash((self.path, self.terminals))

    def reversed(self) -> "CoilGeometry":
        w = -self.winding_map
        w.setflags(write=False)
        return CoilGeometry(
            path=self.path[::-1],
            terminals=(self.terminals[1], self.terminals[0]),
            turns=-self.turns,
            winding_map=w,
            resistance=self.resistance,
            n_switches=self.n_switches,
            n_segments=self.n_segments,
        )


@dataclass(frozen=True)
class SensorPreset:
    index: int
    region: Rect
    bitmap: SwitchBitmap = field(compare=False)
    terminals: tuple[Node, Node]
    channel: int


# ---------------------------------------------------------------------------
# path checks


def _step_axis(a: Node, b: Node) -> str:
    dr, dc = b[0] - a[0], b[1] - a[1]
    if abs(dr) + abs(dc) != 1:
        raise NotAPath(f"non-adjacent step {a} -> {b}", a)
    return "V" if dr else "H"


def validate_path(
    path: Sequence[Node],
    bitmap: SwitchBitmap,
    spec: LatticeSpec,
    terminals: tuple[Node, Node] | None = None,
) -> None:
    """Raise a :class:`LatticeError` unless ``path`` is realisable.

    Rules: a direction change needs the node's switch closed; a node visited
    twice is a straight pass on both visits, once per layer, with its switch
    open; no node is visited more than twice; no straight pass over a closed
    switch; every closed switch is a corner of the path; the endpoints are the
    declared terminals.
    """
    bitmap.check(spec)
    path = [tuple(int(v) for v in n) for n in path]
    if len(path) < 2:
        raise NotAPath("path needs at least two nodes")
    for n in path:
        if not spec.contains(n):
            raise NotAPath("node outside the lattice", n)
    if terminals is not None:
        if path[0] != tuple(terminals[0]):
            raise NotAPath(f"path does not start at terminal {terminals[0]}", path[0])
        if path[-1] != tuple(terminals[1]):
            raise NotAPath(f"path does not end at terminal {terminals[1]}", path[-1])
    if path[0] == path[-1]:
        raise NotAPath("terminals coincide", path[0])

    axes = [_step_axis(a, b) for a, b in zip(path, path[1:])]
    seen_edges: set[frozenset] = set()
    for a, b in zip(path, path[1:]):
        e = frozenset((a, b))
        if e in seen_edges:
            raise IllegalCrossing("segment used twice", a)
        seen_edges.add(e)

    visits: dict[Node, list[str]] = {}
    for i, n in enumerate(path):
        if i == 0 or i == len(path) - 1:
            kind = "end"
        elif axes[i - 1] != axes[i]:
            kind = "turn"
        else:
            kind = axes[i]
        visits.setdefault(n, []).append(kind)

    closed = bitmap.closed
    for n, kinds in visits.items():
        is_closed = bool(closed[n])
        if len(kinds) > 2:
            raise IllegalCrossing("node visited more than twice", n)
        if "end" in kinds:
            if len(kinds) > 1:
                raise IllegalCrossing("terminal node reused", n)
            if is_closed:
                raise NotAPath("closed switch at a terminal", n)
            continue
        if len(kinds) == 2:
            if "turn" in kinds or sorted(kinds) != ["H", "V"]:
                raise IllegalCrossing("reused node must be a pass-through on both layers", n)
            if is_closed:
                raise IllegalCrossing("crossing over a closed switch", n)
            continue
        if kinds[0] == "turn" and not is_closed:
            raise IllegalCrossing("turn at an open switch", n)
        if kinds[0] != "turn" and is_closed:
            raise IllegalCrossing("straight pass over a closed switch", n)

    corners = {n for n, kinds in visits.items() if kinds == ["turn"]}
    for n in bitmap.nodes():
        if n not in corners:
            raise NotAPath("closed switch not on the coil path", n)


# ---------------------------------------------------------------------------
# winding numbers


def winding_map(path: Sequence[Node], spec: LatticeSpec) -> np.ndarray:
    """Per-cell winding number of ``path`` closed by a straight return segment.

    Signed crossing count of a ray cast in +col direction from each cell
    centre.
    """
    n_rows, n_cols = spec.cell_shape
    w = np.zeros((n_rows, n_cols), dtype=np.int64)
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        if c0 == c1 and abs(r1 - r0) == 1:
            # vertical unit edge at x = c0 crosses rays of cell row min(r0, r1)
            # for cell centres left of it
            if r1 > r0:
                w[r0, :c0] += 1
            else:
                w[r1, :c0] -= 1
        elif r0 == r1 and abs(c1 - c0) == 1:
            continue
        else:
            _add_segment_crossings(w, (r0, c0), (r1, c1))
    _add_segment_crossings(w, tuple(path[-1]), tuple(path[0]))
    return w


def _add_segment_crossings(w: np.ndarray, a: Node, b: Node) -> None:
    (y0, x0), (y1, x1) = a, b
    if y0 == y1:
        return
    n_rows, n_cols = w.shape
    for row in range(n_rows):
        py = row + 0.5
        if y0 <= py < y1:
            sign = 1
        elif y1 <= py < y0:
            sign = -1
        else:
            continue
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        # cells whose centre lies left of the crossing point
        n_left = int(np.clip(math.ceil(x_cross - 0.5), 0, n_cols))
        w[row, :n_left] += sign


# ---------------------------------------------------------------------------
# compile


def _wire_pairs(points: dict[int, str]) -> list[tuple[int, int]]:
    """Pair sorted points along one wire; raise on an odd count."""
    keys = sorted(points)
    if len(keys) % 2:
        raise ValueError(keys)
    return [(keys[i], keys[i + 1]) for i in range(0, len(keys), 2)]


def _try_compile(
    closed_nodes: list[Node],
    terminals: tuple[Node, Node],
    tap_axes: tuple[str, str],
    spec: LatticeSpec,
) -> list[Node]:
    rows: dict[int, dict[int, str]] = {}
    cols: dict[int, dict[int, str]] = {}
    for r, c in closed_nodes:
        rows.setdefault(r, {})[c] = "sw"
        cols.setdefault(c, {})[r] = "sw"
    for (r, c), axis in zip(terminals, tap_axes):
        if axis == "H":
            rows.setdefault(r, {})[c] = "tap"
        else:
            cols.setdefault(c, {})[r] = "tap"

    # runs keyed by endpoint node: list of (other endpoint, axis)
    runs: dict[Node, list[tuple[Node, str]]] = {}

    def check_taps_clear(axis: str, wire: int, lo: int, hi: int):
        for t in terminals:
            pos = t[1] if axis == "H" else t[0]
            on_wire = t[0] == wire if axis == "H" else t[1] == wire
            if on_wire and lo < pos < hi:
                raise NotAPath("conductor runs through a terminal", t)

    for axis, wires in (("H", rows), ("V", cols)):
        for wire, points in sorted(wires.items()):
            try:
                pairs = _wire_pairs(points)
            except ValueError:
                keys = sorted(points)
                sws = [k for k in keys if points[k] == "sw"]
                if not sws:
                    node = (wire, keys[-1]) if axis == "H" else (keys[-1], wire)
                    raise OpenCircuit("terminal has no conductor to connect to", node) from None
                k = sws[-1]
                node = (wire, k) if axis == "H" else (k, wire)
                raise NotAPath("dangling conductor", node) from None
            for lo, hi in pairs:
                check_taps_clear(axis, wire, lo, hi)
                a, b = ((wire, lo), (wire, hi)) if axis == "H" else ((lo, wire), (hi, wire))
                runs.setdefault(a, []).append((b, axis))
                runs.setdefault(b, []).append((a, axis))

    # every corner needs exactly one horizontal and one vertical run
    for n in closed_nodes:
        axes = sorted(ax for _, ax in runs.get(n, []))
        if axes != ["H", "V"]:
            raise NotAPath("closed switch does not form a corner", n)
    for t in terminals:
        deg = len(runs.get(t, []))
        if deg == 0:
            raise OpenCircuit("terminal not connected", t)
        if deg > 1:
            raise NotAPath("branching at terminal", t)

    start, end = terminals
    path = [start]
    node, came_axis = start, None
    used: set[frozenset] = set()
    while True:
        options = [(o, ax) for o, ax in runs[node] if ax != came_axis]
        if not options:
            raise OpenCircuit("conductor ends before the second terminal", node)
        other, ax = options[0]
        used.add(frozenset((node, other)))
        dr = (other[0] > node[0]) - (other[0] < node[0])
        dc = (other[1] > node[1]) - (other[1] < node[1])
        cur = node
        while cur != other:
            cur = (cur[0] + dr, cur[1] + dc)
            path.append(cur)
        node, came_axis = other, ax
        if node == end:
            break
        if node == start:
            raise OpenCircuit("conductor loops back to the first terminal", node)
        if len(path) > 4 * spec.n_switches:
            raise NotAPath("conductor does not terminate", node)

    n_runs = sum(len(v) for v in runs.values()) // 2
    if len(used) != n_runs:
        for a, lst in sorted(runs.items()):
            for b, _ in lst:
                if frozenset((a, b)) not in used:
                    raise NotAPath("conductor loop not connected to the terminals", a)
    return path


def compile_coil(
    bitmap: SwitchBitmap,
    terminals: tuple[Node, Node],
    spec: LatticeSpec = LatticeSpec(),
) -> CoilGeometry:
    """Trace the conductor from ``terminals[0]`` to ``terminals[1]``.

    Each terminal is attached to either its row or its column; the first
    attachment (in the order HH, HV, VH, VV) that yields a single legal path
    wins.
    """
    bitmap.check(spec)
    terminals = (tuple(int(v) for v in terminals[0]), tuple(int(v) for v in terminals[1]))
    for t in terminals:
        if not spec.contains(t):
            raise NotAPath("terminal outside the lattice", t)
    if terminals[0] == terminals[1]:
        raise NotAPath("terminals must be distinct", terminals[0])
    for t in terminals:
        if bitmap.closed[t]:
            raise NotAPath("closed switch at a terminal", t)

    closed_nodes = bitmap.nodes()
    first_error: LatticeError | None = None
    path = None
    for tap_axes in itertools.product("HV", repeat=2):
        try:
            path = _try_compile(closed_nodes, terminals, tap_axes, spec)
            validate_path(path, bitmap, spec, terminals)
            break
        except LatticeError as exc:
            if first_error is None or (
                isinstance(first_error, OpenCircuit) and not isinstance(exc, OpenCircuit)
            ):
                first_error = exc
            path = None
    if path is None:
        assert first_error is not None
        raise first_error
    return geometry_from_path(path, bitmap, spec)


def geometry_from_path(path: Sequence[Node], bitmap: SwitchBitmap, spec: LatticeSpec) -> CoilGeometry:
    path = tuple(tuple(int(v) for v in n) for n in path)
    terminals = (path[0], path[-1])
    validate_path(path, bitmap, spec, terminals)
    w = winding_map(path, spec)
    w.setflags(write=False)
    flat = w.ravel()
    turns = int(flat[np.argmax(np.abs(flat))]) if flat.size else 0
    n_sw = int(bitmap.closed.sum())
    n_seg = len(path) - 1
    return CoilGeometry(
        path=path,
        terminals=terminals,
        turns=turns,
        winding_map=w,
        resistance=n_sw * spec.switch_resistance + n_seg * spec.segment_resistance,
        n_switches=n_sw,
        n_segments=n_seg,
    )


def corners_of(path: Sequence[Node]) -> list[Node]:
    """Interior nodes of ``path`` where the direction changes."""
    out = []
    for a, b, c in zip(path, path[1:], path[2:]):
        if _step_axis(a, b) != _step_axis(b, c):
            out.append(tuple(b))
    return out


def bitmap_for_path(path: Sequence[Node], spec: LatticeSpec) -> SwitchBitmap:
    return SwitchBitmap.from_nodes(corners_of(path), spec)


# ---------------------------------------------------------------------------
# rectangular coils and presets


def rectangle_coil(rect: Rect, spec: LatticeSpec = LatticeSpec()) -> tuple[SwitchBitmap, tuple[Node, Node]]:
    """Single-turn counter-clockwise coil around cell rectangle ``rect``.

    The terminals split the top side near its middle.
    """
    r0, r1, c0, c1 = rect
    n_rows, n_cols = spec.cell_shape
    if not (0 <= r0 < r1 <= n_rows and 0 <= c0 < c1 <= n_cols):
        raise LatticeError(f"rectangle {rect} outside the lattice")
    if c1 - c0 < 3:
        raise LatticeError(f"rectangle {rect} too narrow for a tapped coil (need 3 cells)")
    cm = c0 + (c1 - c0 - 1) // 2
    bitmap = SwitchBitmap.from_nodes([(r0, c0), (r0, c1), (r1, c0), (r1, c1)], spec)
    # tap at cm+1 runs toward c1 first: along y = r0 in +x, which is the
    # counter-clockwise sense in (col, row) coordinates
    return bitmap, ((r0, cm + 1), (r0, cm))


def preset_region(index: int, spec: LatticeSpec = LatticeSpec()) -> Rect:
    if not 0 <= index < N_SENSORS:
        raise IndexOutOfRange(f"sensor index {index} not in 0..{N_SENSORS - 1}")
    side, stride = spec.preset_side, spec.preset_stride
    gi, gj = divmod(index, 4)
    r0, c0 = gi * stride, gj * stride
    n_rows, n_cols = spec.cell_shape
    if r0 + side > n_rows or c0 + side > n_cols:
        raise ValueError("preset tiling does not fit the lattice")
    return (r0, r0 + side, c0, c0 + side)


# sensors 0, 1, 5, 6 share the first channel; the others group by row
DEFAULT_CHANNEL_MAP: dict[int, int] = {
    0: 0, 1: 0, 5: 0, 6: 0,
    2: 1, 3: 1, 4: 1, 7: 1,
    8: 2, 9: 2, 10: 2, 11: 2,
    12: 3, 13: 3, 14: 3, 15: 3,
}


def preset_sensor(
    index: int,
    spec: LatticeSpec = LatticeSpec(),
    channel_map: dict[int, int] = DEFAULT_CHANNEL_MAP,
) -> SensorPreset:
    region = preset_region(index, spec)
    bitmap, terminals = rectangle_coil(region, spec)
    return SensorPreset(index=index, region=region, bitmap=bitmap, terminals=terminals, channel=channel_map[index])


def preset_coil(index: int, spec: LatticeSpec = LatticeSpec()) -> CoilGeometry:
    p = preset_sensor(index, spec)
    return compile_coil(p.bitmap, p.terminals, spec)


def decode(control_bits: int, spec: LatticeSpec = LatticeSpec()) -> SwitchBitmap:
    """4-bit control word to the gate pattern of the selected preset."""
    return preset_sensor(int(control_bits) & 0xF, spec).bitmap


def rect_overlap(a: Rect, b: Rect) -> Rect | None:
    r0, r1 = max(a[0], b[0]), min(a[1], b[1])
    c0, c1 = max(a[2], b[2]), min(a[3], b[3])
    if r0 >= r1 or c0 >= c1:
        return None
    return (r0, r1, c0, c1)


def rect_area(rect: Rect) -> int:
    return (rect[1] - rect[0]) * (rect[3] - rect[2])


# ---------------------------------------------------------------------------
# coil program files

COIL_HEADER = "psa-coil v1"


class CoilFileError(ValueError):
    pass


def parse_coil_program(text: str) -> tuple[LatticeSpec, SwitchBitmap, tuple[Node, Node]]:
    grid = None
    switches: list[Node] = []
    taps = None
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line.split() != COIL_HEADER.split():
                raise CoilFileError(f"line {lineno}: expected header '{COIL_HEADER}'")
            header_seen = True
            continue
        tok = line.split()
        try:
            if tok[0] == "grid" and len(tok) == 3:
                grid = (int(tok[1]), int(tok[2]))
            elif tok[0] == "sw" and len(tok) == 3:
                switches.append((int(tok[1]), int(tok[2])))
            elif tok[0] == "tap" and len(tok) == 5:
                taps = ((int(tok[1]), int(tok[2])), (int(tok[3]), int(tok[4])))
            else:
                raise CoilFileError(f"line {lineno}: cannot parse '{line}'")
        except ValueError as exc:
            if isinstance(exc, CoilFileError):
                raise
            raise CoilFileError(f"line {lineno}: bad integer in '{line}'") from None
    if not header_seen:
        raise CoilFileError("missing header")
    if grid is None:
        raise CoilFileError("missing 'grid' line")
    if taps is None:
        raise CoilFileError("missing 'tap' line")
    spec = LatticeSpec(n_horizontal_wires=grid[0], n_vertical_wires=grid[1])
    bitmap = SwitchBitmap.from_nodes(switches, spec)
    return spec, bitmap, taps


def format_coil_program(spec: LatticeSpec, bitmap: SwitchBitmap, terminals: tuple[Node, Node]) -> str:
    lines = [COIL_HEADER, f"grid {spec.n_horizontal_wires} {spec.n_vertical_wires}"]
    lines += [f"sw {r} {c}" for r, c in bitmap.nodes()]
    (a, b), (c, d) = terminals
    lines.append(f"tap {a} {b} {c} {d}")
    return "\n".join(lines) + "\n"


def read_coil_program(path: str | Path):
    return parse_coil_program(Path(path).read_text())
