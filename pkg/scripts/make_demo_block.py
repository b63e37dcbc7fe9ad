"""Write a small random transformer block to a weights file.

Usage: python3 scripts/make_demo_block.py out.weights [d_model] [heads] [seed]
"""
import sys

import numpy as np

from polyattn.polymodel import random_block_weights, save_block_weights

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        sys.exit(1)
    out = sys.argv[1]
    d_model = int(sys.argv[2]) if len(sys.argv) > 2 else 8
    heads = int(sys.argv[3]) if len(sys.argv) > 3 else 2
    seed = int(sys.argv[4]) if len(sys.argv) > 4 else 7
    w = random_block_weights(np.random.default_rng(seed), d_model, heads, d_ff=2 * d_model)
    save_block_weights(w, out)
    print(f"wrote {out}: d_model={d_model} heads={heads} d_ff={2 * d_model} seed={seed}")
