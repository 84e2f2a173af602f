"""Time the compiled kernels against the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--nodes 20000] [--repeat 5]

Both backends are imported directly, so the result does not depend on
GTTT_FORCE_PYTHON. Outputs are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from gttt import _pykernels as py
from gttt.graph import SbmParams, generate_sbm

try:
    from gttt import _ckernels as cy
except ImportError:
    cy = None


def build(nodes, avg_degree, seed):
    half = nodes // 2
    p_in = avg_degree / half * 0.75
    params = SbmParams([half, nodes - half], p_in, p_in / 3, [[1.0] * 16, [-1.0] * 16])
    g = generate_sbm(params, seed)
    return g.csr_offsets.copy(), g.csr_targets.copy()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=float, default=10.0)
    ap.add_argument("--width", type=int, default=64, help="columns of the dense operand")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels not built; run pip install -e . --no-build-isolation")

    off, tgt = build(args.nodes, args.degree, args.seed)
    dense = np.random.default_rng(args.seed).normal(size=(args.nodes, args.width))
    print(f"graph: {args.nodes} nodes, {len(tgt) // 2} edges; dense operand width {args.width}")

    norm = {name: mod.gcn_normalize(off, tgt) for name, mod in (("python", py), ("cython", cy))}
    for a, b in zip(norm["python"], norm["cython"]):
        assert np.allclose(a, b), "gcn_normalize backends disagree"
    n_off, n_tgt, n_w = norm["cython"]
    assert np.allclose(py.spmm(n_off, n_tgt, n_w, dense), cy.spmm(n_off, n_tgt, n_w, dense))
    assert np.allclose(py.pagerank_power(off, tgt, 0.85, 1e-10, 200)[0],
                       cy.pagerank_power(off, tgt, 0.85, 1e-10, 200)[0])

    cases = {
        "gcn_normalize": lambda m: m.gcn_normalize(off, tgt),
        "spmm": lambda m: m.spmm(n_off, n_tgt, n_w, dense),
        "pagerank_power": lambda m: m.pagerank_power(off, tgt, 0.85, 1e-10, 200),
    }
    print(f"{'kernel':<16}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases.items():
        t = {}
        for label, mod in (("python", py), ("cython", cy)):
            t[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t['python']:>12.2f}{t['cython']:>12.2f}{t['python'] / t['cython']:>9.2f}x")


if __name__ == "__main__":
    main()
