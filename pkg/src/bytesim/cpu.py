"""Synthetic 8-bit CPU: codec, stepper, random programs, dataset records.

The machine is deliberately tiny: a program counter that counts instructions,
an accumulator, a 4-byte instruction register, ten general registers A..J,
and a side stack that is *not* part of the architectural state. Instructions
are fixed 4-byte records OP ADDR1 ADDR2 ADDR3; register operands are encoded
1..10 (0 means "field unused"), which is what makes the operand arity
recoverable from the bytes alone. Opcode 0x00 is HLT so zero-filled memory
always halts.

Arithmetic saturates into [0, 255] (ADD, SUB, MUL, INC, DEC); DIV is floor
division and leaves the destination untouched on divide-by-zero; shifts drop
the carried-out bit; rotates are 8-bit circular. POP from an empty stack
loads the current accumulator.

A dataset instance is one 1KB memory image followed by the 16-byte state
snapshots: the initial state, then one snapshot per fetch. Each snapshot is
taken after fetch/increment and before execute, so it shows the just-fetched
instruction together with the effects of everything before it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

MEMORY_BYTES = 1024
STATE_BYTES = 16
MAX_INSTRUCTIONS = 256
REG_NAMES = "ABCDEFGHIJ"

MNEMONICS = [
    "HLT", "CLR", "INC", "DEC", "SHL", "SHR", "ROL", "ROR", "NOT", "PUSH",
    "POP", "LOADI", "SWAP", "ADD", "SUB", "MUL", "DIV", "AND", "OR", "XOR",
    "MOV",
]
OPCODES = {name: idx for idx, name in enumerate(MNEMONICS)}
HLT = OPCODES["HLT"]
LOADI = OPCODES["LOADI"]

# (mnemonic, arity) rows; the generator draws uniformly from the non-HLT rows
ARITIES = {
    "HLT": (0,),
    "CLR": (0, 1), "INC": (0, 1), "DEC": (0, 1), "SHL": (0, 1),
    "SHR": (0, 1), "ROL": (0, 1), "ROR": (0, 1), "NOT": (0, 1),
    "PUSH": (1,), "POP": (1,), "LOADI": (1,), "SWAP": (1, 2),
    "ADD": (1, 2, 3), "SUB": (1, 2, 3), "MUL": (1, 2, 3), "DIV": (1, 2, 3),
    "AND": (1, 2, 3), "OR": (1, 2, 3), "XOR": (1, 2, 3),
    "MOV": (2,),
}
VARIANT_ROWS = [(m, a) for m in MNEMONICS for a in ARITIES[m]]
NONHALT_ROWS = [row for row in VARIANT_ROWS if row[0] != "HLT"]

UNARY_OPS = {"CLR", "INC", "DEC", "SHL", "SHR", "ROL", "ROR", "NOT"}
BINARY_OPS = {"ADD", "SUB", "MUL", "DIV", "AND", "OR", "XOR"}


class InvalidInstructionError(ValueError):
    pass


class NoHaltError(RuntimeError):
    pass


def variant_census() -> tuple[int, int]:
    """(distinct mnemonics, (mnemonic, arity) rows) in the implemented table."""
    return len(MNEMONICS), len(VARIANT_ROWS)


@dataclass(frozen=True)
class Instruction:
    op: int
    addr1: int = 0
    addr2: int = 0
    addr3: int = 0

    def encode(self) -> bytes:
        return bytes((self.op, self.addr1, self.addr2, self.addr3))

    @property
    def mnemonic(self) -> str:
        if self.op >= len(MNEMONICS):
            raise InvalidInstructionError(f"opcode {self.op:#04x} is undefined")
        return MNEMONICS[self.op]

    @property
    def arity(self) -> int:
        """Count of leading non-zero address fields; LOADI is fixed at 1."""
        if self.op == LOADI:
            return 1
        n = 0
        for a in (self.addr1, self.addr2, self.addr3):
            if a == 0:
                break
            n += 1
        return n

    def render(self) -> str:
        """Human-readable form, e.g. 'MUL E D', 'LOADI 86', 'HLT'."""
        name = self.mnemonic
        if self.op == LOADI:
            return f"LOADI {self.addr1}"
        parts = [name]
        for a in (self.addr1, self.addr2, self.addr3)[: self.arity]:
            parts.append(_reg_name(a))
        return " ".join(parts)


def _reg_name(code: int) -> str:
    if not 1 <= code <= 10:
        raise InvalidInstructionError(f"address byte {code} is not a register")
    return REG_NAMES[code - 1]


def decode_instruction(raw: bytes | bytearray | np.ndarray) -> Instruction:
    """Any 4 bytes decode structurally; semantic validity is checked on use."""
    b = bytes(raw)
    if len(b) != 4:
        raise ValueError("an instruction is exactly 4 bytes")
    return Instruction(b[0], b[1], b[2], b[3])


def encode_instruction(text: str) -> bytes:
    """Inverse of Instruction.render over the whole variant table."""
    parts = text.split()
    if not parts:
        raise ValueError("empty instruction text")
    name = parts[0].upper()
    if name not in OPCODES:
        raise ValueError(f"unknown mnemonic {name!r}")
    operands = parts[1:]
    if name == "LOADI":
        if len(operands) != 1:
            raise ValueError("LOADI takes exactly one immediate")
        imm = int(operands[0])
        if not 0 <= imm <= 255:
            raise ValueError("immediate must be in 0..255")
        return Instruction(OPCODES[name], imm).encode()
    if len(operands) not in ARITIES[name]:
        raise ValueError(f"{name} does not take {len(operands)} operands")
    addrs = [0, 0, 0]
    for i, op in enumerate(operands):
        reg = op.upper()
        if reg not in REG_NAMES or len(reg) != 1:
            raise ValueError(f"bad register {op!r}")
        addrs[i] = REG_NAMES.index(reg) + 1
    return Instruction(OPCODES[name], *addrs).encode()


def assemble(mnemonics: list[str]) -> np.ndarray:
    """Program text -> zero-padded 1KB memory image."""
    if len(mnemonics) > MAX_INSTRUCTIONS:
        raise ValueError("program exceeds memory")
    memory = np.zeros(MEMORY_BYTES, dtype=np.uint8)
    for i, text in enumerate(mnemonics):
        memory[i * 4 : i * 4 + 4] = np.frombuffer(encode_instruction(text), dtype=np.uint8)
    return memory


# -- machine state -------------------------------------------------------------


@dataclass
class CpuState:
    pc: int
    acc: int
    ir: tuple[int, int, int, int]
    regs: tuple[int, ...]  # A..J

    def __post_init__(self):
        if len(self.ir) != 4 or len(self.regs) != 10:
            raise ValueError("IR is 4 bytes and there are 10 registers")

    def to_bytes(self) -> bytes:
        return bytes((self.pc, self.acc, *self.ir, *self.regs))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CpuState":
        if len(raw) != STATE_BYTES:
            raise ValueError("a CPU state is exactly 16 bytes")
        return cls(pc=raw[0], acc=raw[1], ir=tuple(raw[2:6]), regs=tuple(raw[6:16]))

    def instruction(self) -> Instruction:
        return Instruction(*self.ir)

    def render(self, step: int) -> str:
        regs = ", ".join(f"'{REG_NAMES[i]}': {v}" for i, v in enumerate(self.regs))
        return (
            f"State at step {step}:\n"
            f"PC: {self.pc}\n"
            f"ACC: {self.acc}\n"
            f"IR: {self.instruction().render()}\n"
            f"Registers: {{{regs}}}"
        )


def _sat(v: int) -> int:
    return 0 if v < 0 else 255 if v > 255 else v


def _unary(name: str, v: int) -> int:
    if name == "CLR":
        return 0
    if name == "INC":
        return _sat(v + 1)
    if name == "DEC":
        return _sat(v - 1)
    if name == "SHL":
        return (v << 1) & 0xFF
    if name == "SHR":
        return v >> 1
    if name == "ROL":
        return ((v << 1) | (v >> 7)) & 0xFF
    if name == "ROR":
        return ((v >> 1) | (v << 7)) & 0xFF
    if name == "NOT":
        return (~v) & 0xFF
    raise AssertionError(name)


def _binary(name: str, a: int, b: int) -> int | None:
    """Result of a ∘ b; None means 'leave destination unchanged' (DIV by 0)."""
    if name == "ADD":
        return _sat(a + b)
    if name == "SUB":
        return _sat(a - b)
    if name == "MUL":
        return _sat(a * b)
    if name == "DIV":
        return a // b if b else None
    if name == "AND":
        return a & b
    if name == "OR":
        return a | b
    if name == "XOR":
        return a ^ b
    raise AssertionError(name)


def fetch(state: CpuState, memory: np.ndarray) -> CpuState:
    """Load memory[pc*4..pc*4+3] into IR and advance the PC.

    The PC is one byte, so the increment wraps mod 256; a full 256-instruction
    program records PC 0 at its final (HLT) state.
    """
    if state.pc >= MAX_INSTRUCTIONS:
        raise NoHaltError("program counter ran off the end of memory")
    base = state.pc * 4
    ir = tuple(int(x) for x in memory[base : base + 4])
    return replace(state, pc=(state.pc + 1) & 0xFF, ir=ir)


def apply_instruction(state: CpuState, stack: list[int]) -> tuple[CpuState, bool]:
    """Execute the instruction in IR. Returns (state', halted)."""
    inst = state.instruction()
    if inst.op >= len(MNEMONICS):
        return state, True  # halt-with-diagnostic; caller records it
    name = MNEMONICS[inst.op]
    if name == "HLT":
        return state, True
    acc = state.acc
    regs = list(state.regs)

    def rget(code: int) -> int:
        _reg_name(code)  # validates
        return regs[code - 1]

    def rset(code: int, value: int):
        _reg_name(code)
        regs[code - 1] = value

    arity = inst.arity
    if name == "LOADI":
        acc = inst.addr1
    elif name in UNARY_OPS:
        if arity == 0:
            acc = _unary(name, acc)
        else:
            rset(inst.addr1, _unary(name, rget(inst.addr1)))
    elif name in BINARY_OPS:
        if arity == 1:
            r = _binary(name, acc, rget(inst.addr1))
            acc = acc if r is None else r
        elif arity == 2:
            r = _binary(name, rget(inst.addr1), rget(inst.addr2))
            if r is not None:
                rset(inst.addr1, r)
        elif arity == 3:
            r = _binary(name, rget(inst.addr2), rget(inst.addr3))
            if r is not None:
                rset(inst.addr1, r)
        else:
            raise InvalidInstructionError(f"{name} with no operands")
    elif name == "MOV":
        if arity != 2:
            raise InvalidInstructionError("MOV needs two registers")
        rset(inst.addr1, rget(inst.addr2))
    elif name == "SWAP":
        if arity == 1:
            tmp = rget(inst.addr1)
            rset(inst.addr1, acc)
            acc = tmp
        elif arity == 2:
            t1, t2 = rget(inst.addr1), rget(inst.addr2)
            rset(inst.addr1, t2)
            rset(inst.addr2, t1)
        else:
            raise InvalidInstructionError("SWAP needs one or two registers")
    elif name == "PUSH":
        if arity != 1:
            raise InvalidInstructionError("PUSH needs a register")
        stack.append(rget(inst.addr1))
    elif name == "POP":
        if arity != 1:
            raise InvalidInstructionError("POP needs a register")
        rset(inst.addr1, stack.pop() if stack else acc)
    else:
        raise AssertionError(name)
    return replace(state, acc=acc, regs=tuple(regs)), False


def execute_step(
    state: CpuState, memory: np.ndarray, stack: list[int] | None = None
) -> tuple[CpuState, bool]:
    """One full fetch/increment/execute cycle. Returns (state', halted)."""
    if stack is None:
        stack = []
    fetched = fetch(state, memory)
    return apply_instruction(fetched, stack)


@dataclass
class CpuInstance:
    """One dataset record: memory image plus the recorded state trace."""

    memory: np.ndarray
    trace: list[CpuState]
    diagnostic: str | None = None

    @property
    def instruction_count(self) -> int:
        return len(self.trace) - 1

    def serialize(self) -> bytes:
        out = io.BytesIO()
        out.write(self.memory.astype(np.uint8).tobytes())
        for st in self.trace:
            out.write(st.to_bytes())
        return out.getvalue()


def run_program(memory: np.ndarray, acc: int = 0, regs=(0,) * 10) -> CpuInstance:
    """Record initial state, then one snapshot per fetch until HLT is fetched."""
    memory = np.asarray(memory, dtype=np.uint8)
    if memory.shape != (MEMORY_BYTES,):
        raise ValueError("memory must be exactly 1024 bytes")
    state = CpuState(pc=0, acc=int(acc), ir=(0, 0, 0, 0), regs=tuple(int(r) for r in regs))
    trace = [state]
    stack: list[int] = []
    diagnostic = None
    for _ in range(MAX_INSTRUCTIONS):
        state = fetch(state, memory)
        trace.append(state)
        if state.instruction().op >= len(MNEMONICS):
            diagnostic = f"invalid opcode {state.ir[0]:#04x} at pc {state.pc - 1}"
            break
        state, halted = apply_instruction(state, stack)
        if halted:
            break
    else:
        raise NoHaltError("no HLT fetched within 256 instructions")
    return CpuInstance(memory=memory, trace=trace, diagnostic=diagnostic)


def render_trace(inst: CpuInstance, program: bool = True) -> str:
    """Appendix-style human-readable dump of an instance."""
    blocks = []
    if program:
        names = [
            decode_instruction(inst.memory[i * 4 : i * 4 + 4]).render()
            for i in range(inst.instruction_count)
        ]
        blocks.append("Program: [" + ", ".join(f"'{n}'" for n in names) + "]")
    for step, st in enumerate(inst.trace):
        blocks.append(st.render(step))
    return "\n\n".join(blocks)


# -- random generation -----------------------------------------------------------


def random_instruction(row: tuple[str, int], rng: np.random.Generator) -> Instruction:
    name, arity = row
    op = OPCODES[name]
    if name == "LOADI":
        return Instruction(op, int(rng.integers(0, 256)))
    if arity == 0:
        return Instruction(op)
    if name in ("MOV", "SWAP") and arity == 2:
        a, b = rng.choice(10, size=2, replace=False) + 1
        return Instruction(op, int(a), int(b))
    addrs = [int(rng.integers(1, 11)) for _ in range(arity)]
    return Instruction(op, *addrs, *([0] * (3 - arity)))


def random_program(n: int, rng: np.random.Generator) -> np.ndarray:
    """n-1 uniform draws over the 43 non-HLT variant rows, then HLT; rest zero."""
    if not 1 <= n <= MAX_INSTRUCTIONS:
        raise ValueError("program length must be in 1..256")
    memory = np.zeros(MEMORY_BYTES, dtype=np.uint8)
    for i in range(n - 1):
        row = NONHALT_ROWS[int(rng.integers(0, len(NONHALT_ROWS)))]
        memory[i * 4 : i * 4 + 4] = np.frombuffer(
            random_instruction(row, rng).encode(), dtype=np.uint8
        )
    # instruction n-1 is HLT = four zero bytes, already in place
    return memory


def generate_instance(
    rng: np.random.Generator, max_instructions: int = MAX_INSTRUCTIONS
) -> CpuInstance:
    """Random registers, random program of uniform length 1..max, executed."""
    n = int(rng.integers(1, max_instructions + 1))
    acc = int(rng.integers(0, 256))
    regs = tuple(int(v) for v in rng.integers(0, 256, size=10))
    memory = random_program(n, rng)
    return run_program(memory, acc=acc, regs=regs)


# -- serialization -----------------------------------------------------------------


def serialize_instance(inst: CpuInstance) -> bytes:
    return inst.serialize()


def deserialize_instance(raw: bytes) -> CpuInstance:
    size = len(raw)
    if size < MEMORY_BYTES + 2 * STATE_BYTES or (size - MEMORY_BYTES) % STATE_BYTES:
        raise ValueError(f"instance length {size} is not 1024 + 16k with k >= 2")
    memory = np.frombuffer(raw[:MEMORY_BYTES], dtype=np.uint8).copy()
    trace = [
        CpuState.from_bytes(raw[off : off + STATE_BYTES])
        for off in range(MEMORY_BYTES, size, STATE_BYTES)
    ]
    return CpuInstance(memory=memory, trace=trace)
