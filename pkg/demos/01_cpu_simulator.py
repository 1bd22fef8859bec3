"""Tour of the synthetic CPU: assemble, execute, trace, and mass-generate.

Run:  python3 demos/01_cpu_simulator.py
"""

import numpy as np

from bytesim import cpu

# ---------------------------------------------------------------------------
# 1. Hand-written program. The machine has an accumulator, ten registers
#    A..J, and a 4-byte instruction format OP ADDR1 ADDR2 ADDR3.
# ---------------------------------------------------------------------------
program = ["LOADI 200", "SWAP A", "ADD A", "MUL B C", "PUSH B", "POP D", "HLT"]
memory = cpu.assemble(program)
print("encoded first instruction:", [int(b) for b in memory[:4]])

instance = cpu.run_program(memory, acc=7, regs=(1, 12, 30, 0, 0, 0, 0, 0, 0, 0))
print(cpu.render_trace(instance))

# ---------------------------------------------------------------------------
# 2. Semantics corner cases: saturation, floor division, rotation.
# ---------------------------------------------------------------------------
print("\nsaturating MUL: 174*35 ->", end=" ")
t = cpu.run_program(cpu.assemble(["MUL E D", "HLT"]), regs=(0, 0, 0, 35, 174, 0, 0, 0, 0, 0))
print(t.trace[-1].regs[4])

print("floor DIV: 146//140 ->", end=" ")
t = cpu.run_program(cpu.assemble(["DIV I", "HLT"]), acc=146, regs=(0,) * 8 + (140, 0))
print(t.trace[-1].acc)

# ---------------------------------------------------------------------------
# 3. The dataset unit: 1KB memory + 16-byte state per fetch. A random
#    instance serializes to 1024 + 16*(n+1) bytes for an n-instruction
#    program.
# ---------------------------------------------------------------------------
rng = np.random.default_rng(0)
sizes = []
for _ in range(2000):
    inst = cpu.generate_instance(rng)
    sizes.append(len(cpu.serialize_instance(inst)))
sizes = np.array(sizes)
print(f"\n2000 random instances: mean size {sizes.mean():.1f} bytes "
      f"(min {sizes.min()}, max {sizes.max()})")
print("instruction census:", cpu.variant_census(), "- 21 types, 44 table rows")
