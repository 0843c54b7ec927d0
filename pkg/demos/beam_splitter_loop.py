"""
A cavity inside a beam-splitter loop
====================================

A beam splitter ``T = [[α, β], [β, -α]]`` routes its second output into a
one-sided cavity, and the cavity output returns to the splitter. The cavity
coupling grows like ``k``, so for large ``k`` the cavity can be eliminated.
Eliminating first and closing the loop afterwards should give the same
static device as closing the loop first and eliminating afterwards.
"""

import numpy as np

from slhnet import SLH, OscillatorModel, check_commutativity

# %%
# Build the two components. The splitter has no internal dynamics, so it is
# an oscillator model with zero oscillators.

alpha, s0, gamma = 0.6, np.exp(1j * np.pi / 4), 2.0
beta = np.sqrt(1 - alpha ** 2)
splitter = OscillatorModel.from_slh(
    SLH(np.array([[alpha, beta], [beta, -alpha]]), np.zeros((2, 1)), np.zeros((1, 1))))
cavity = OscillatorModel.from_hamiltonian([[s0]], [[np.sqrt(gamma)]], [[0]], [[0]], [[0]], [[0]])

# %%
# Open-loop channels are numbered component by component: 0 and 1 belong to
# the splitter, 2 to the cavity. Splitter output 1 feeds the cavity and the
# cavity output feeds splitter input 1.

report = check_commutativity([splitter, cavity], [(1, 2), (2, 1)], ([0], [0]))
for name, pre in report.preconditions.items():
    print(f"{name:<34} {'ok' if pre.ok else 'FAIL'}  {pre.value:.4g}")

# %%
# Both orders land on the same all-pass device.

print("verdict:", report.verdict)
print("S, eliminate then close:", report.path_af.S[0, 0])
print("S, close then eliminate:", report.path_fa.S[0, 0])
print("closed form (α - S0)/(1 - α S0):", (alpha - s0) / (1 - alpha * s0))
print("largest block difference:", max(report.max_block_diff.values()))
