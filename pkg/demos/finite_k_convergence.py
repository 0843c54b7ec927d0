"""
Watching the limit emerge
=========================

The bundled ``beam_splitter_probe.slh`` network carries a qubit inside the
looped cavity. For growing ``k`` the qubit dynamics, simulated with the full
master equation on a truncated Fock space, approach the dynamics generated
by the eliminated model. The error is the largest deviation of a unit-norm
qubit observable over ``0 <= t <= 5``.
"""

import warnings

import numpy as np

from slhnet import example_network
from slhnet.netdsl import compile_network, parse_file
from slhnet.sim import convergence_study

net = compile_network(parse_file(example_network("beam_splitter_probe")))
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    report = convergence_study(net.model, net.connections, ks=(2, 4, 8, 16), cutoff=8,
                               t_grid=np.linspace(0, 5, 51), externals=net.externals)

print(report.to_table())

# %%
# Successive ratios near 2 or more mean the error falls at least like 1/k.

errs = report.errors
print("ratios:", [round(a / b, 2) for a, b in zip(errs, errs[1:])])
