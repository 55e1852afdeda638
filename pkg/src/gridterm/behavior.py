"""Application-layer behavior codes.

One byte at a fixed offset of the TCP payload carries the packet's behavior.
The byte value maps to one of 14 states, grouped into six categories; packets
with no payload (or an unmapped byte) fall into the extra ZERO state.
"""

from dataclasses import dataclass

from .errors import ConfigError

CATEGORIES = {
    "Test": ("T1", "T2"),
    "Write": ("W1",),
    "Identification": ("ID1",),
    "Read": ("R1", "R2", "R3", "R4", "R5", "R6"),
    "Transport": ("TR1", "TR2", "TR3"),
    "Individuation": ("IN1",),
}

STATES = tuple(s for group in CATEGORIES.values() for s in group)
N_STATES = len(STATES)  # 14
ZERO = N_STATES  # index of the ZERO state
STATE_NAMES = STATES + ("ZERO",)
STATE_INDEX = {name: i for i, name in enumerate(STATE_NAMES)}

# 14 states plus ZERO, each counted per direction
N_BEHAVIOR_DIMS = 2 * (N_STATES + 1)  # 30


@dataclass(frozen=True)
class BehaviorCodeTable:
    offset: int
    mapping: tuple  # 256 entries, each a state index in [0, N_STATES]

    def __post_init__(self):
        if self.offset < 0:
            raise ConfigError(f"behavior offset must be >= 0, got {self.offset}")
        if len(self.mapping) != 256:
            raise ConfigError("behavior mapping must have 256 entries")

    @classmethod
    def from_states(cls, offset, states):
        """Build from ``{state_name: [byte values]}``; all 14 states required."""
        unknown = set(states) - set(STATES)
        if unknown:
            raise ConfigError(f"unknown behavior states: {sorted(unknown)}")
        missing = [s for s in STATES if s not in states]
        if missing:
            raise ConfigError(f"behavior table is missing states: {missing}")
        mapping = [ZERO] * 256
        seen = {}
        for name in STATES:
            codes = states[name]
            if isinstance(codes, int):
                codes = [codes]
            if not codes:
                raise ConfigError(f"state {name} has no codes")
            for code in codes:
                if not isinstance(code, int) or not 0 <= code <= 255:
                    raise ConfigError(f"state {name}: code {code!r} is not a byte value")
                if code in seen:
                    raise ConfigError(f"code {code} assigned to both {seen[code]} and {name}")
                seen[code] = name
                mapping[code] = STATE_INDEX[name]
        return cls(int(offset), tuple(mapping))

    @classmethod
    def default(cls):
        # offset 0, byte values 1..14 in state order; 0 and 15..255 unmapped
        return cls.from_states(0, {name: [i + 1] for i, name in enumerate(STATES)})

    def states(self):
        out = {name: [] for name in STATES}
        for code, state in enumerate(self.mapping):
            if state != ZERO:
                out[STATE_NAMES[state]].append(code)
        return out

    def code_for(self, state):
        """Lowest byte value that encodes ``state`` (used by the generator)."""
        idx = STATE_INDEX[state] if isinstance(state, str) else state
        for code, s in enumerate(self.mapping):
            if s == idx:
                return code
        raise ConfigError(f"state {STATE_NAMES[idx]} has no code in this table")

    def to_dict(self):
        return {"offset": self.offset, "states": self.states()}


def load_table(path):
    """Read a behavior table file: ``offset = N`` plus one ``STATE = [codes]`` line per state."""
    from .config import read_toml

    doc = read_toml(path)
    if "offset" not in doc:
        raise ConfigError(f"{path}: missing 'offset'")
    offset = doc.pop("offset")
    states = doc.pop("states", None) or doc
    return BehaviorCodeTable.from_states(offset, states)


def extract_behavior_code(payload, table):
    if table.offset < len(payload):
        return table.mapping[payload[table.offset]]
    return ZERO


def behavior_columns():
    """Column names of the 30-dim behavior vector (state-major, send before recv)."""
    return [f"{name}_{d}" for name in STATE_NAMES for d in ("send", "recv")]
