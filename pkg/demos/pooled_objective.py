"""
Training on positives only, with and without the pool term
==========================================================

"""

import numpy as np

from screenlab import (
    EvalInputs,
    TrainConfig,
    default_library,
    default_oracle,
    evaluate,
    sample_sequences,
    train,
)
from screenlab.screen import allocate, simulate_cells

lib, oracle = default_library(), default_oracle()

# A sorted population; only 2000 cells get sequenced
cells = simulate_cells(lib, oracle, 200_000, seed=0)
print("hit rate", cells.n_positive / len(cells))
ds = allocate(cells, 2000, q=1.0, seed=1, alphabet=lib.alphabet)

# A second screen for evaluation: its positives plus fresh library draws
held = simulate_cells(lib, oracle, 200_000, seed=2)
inputs = EvalInputs(held.sequences[held.y == 1], held.n_positive / len(held), sample_sequences(lib, 50_000, 3))
truth = simulate_cells(lib, oracle, 200_000, seed=4)

arch = {"kind": "mlp", "hidden": [32]}
for objective in ("xy", "leavs"):
    cfg = TrainConfig(objective=objective, epochs=200, seed=0)
    model, history = train(ds, arch, "bernoulli", cfg, lib)
    rep = evaluate(model, inputs, (truth.sequences, truth.y))
    print(f"{objective:6s} accuracy {rep.accuracy_est:.3f} (true {rep.accuracy_true:.3f})  "
          f"AUPRC {rep.auprc_est:.3f} (true {rep.auprc_true:.3f})")

# With only positives, cross-entropy learns "everything is active".
# The pool term pins the average prediction to the pool hit rate.
print("last m_hat", history.m_hat[-1])
