"""How context gating works, one mechanism at a time.

A gated unit owns a bank of segment vectors in context space. For a
given context it picks the segment with the strongest response,
squashes that response through a sigmoid, and multiplies its
pre-activation by the result. Combined with a k-winners activation,
different contexts steer different subsets of units into the active
set.

Run from the repository root:

    python3 demos/active_dendrites.py
"""

import numpy as np

from kwinnow.dendrites import DendriteBank, gate, gate_conv, \
    select_segments
from kwinnow.nn import kwta
from kwinnow.tensor import Tensor


def main():
    rng = np.random.default_rng(0)
    units, segments, dim = 8, 4, 3
    # Fan-in 1: each context below lights a single component, so the
    # init is scaled for single-component responses.
    bank = DendriteBank(units, segments, dim, rng, fan_in=1)

    print("gate values per unit for three one-hot contexts:")
    contexts = np.eye(dim)
    for t, ctx in enumerate(contexts):
        vals, idx = select_segments(bank, ctx)
        gates = 1.0 / (1.0 + np.exp(-vals))
        cells = " ".join(f"{g:5.2f}" for g in gates)
        print(f"  context {t}: [{cells}]")
    print("each context up- and down-regulates its own subset.\n")

    # The zero context carries no information: every selected response
    # is zero, so every gate is exactly one half.
    pre = Tensor(rng.normal(size=(2, units)))
    halved = gate(pre, np.zeros(dim), bank)
    assert np.array_equal(halved.data, 0.5 * pre.data)
    print("zero context: every gated pre-activation is exactly half "
          "its ungated value.\n")

    # Conv layers gate whole channels. One scalar per channel scales
    # the entire feature map.
    conv_bank = DendriteBank(3, segments, dim, rng, fan_in=1)
    maps = Tensor(rng.normal(size=(1, 3, 4, 4)))
    gated = gate_conv(maps, contexts[0], conv_bank)
    scales = gated.data[0, :, 0, 0] / maps.data[0, :, 0, 0]
    print("conv gating: per-channel scale factors",
          np.round(scales, 3), "\n")

    # Gating plus kwta is the routing mechanism: the same weights fire
    # different winner sets under different contexts.
    wide = DendriteBank(12, segments, 4, np.random.default_rng(5),
                        fan_in=1)
    z = Tensor(np.ones((1, 12)))
    print("winners (k=4) for identical pre-activations under different "
          "contexts:")
    for t in range(4):
        ctx = np.zeros(4)
        ctx[t] = 1.0
        routed = kwta(gate(z, ctx, wide), 4)
        winners = [int(u) for u in np.flatnonzero(routed.data[0])]
        print(f"  context {t}: units {winners}")


if __name__ == "__main__":
    main()
