#!/usr/bin/env python3
"""Monte-Carlo oracle for cosine distortion under uniform random projection.

Measures, in float64 and independently of the library code, the mean
absolute cosine error when projecting unit-vector pairs from dimension V
down to W with entries drawn uniformly from [-1, 1]. The measured value is
frozen into tests/fixtures/jl_oracle.json and the test suite asserts the
library path stays within 1.5x of it.

Run once, by hand:  python scripts/jl_oracle.py
"""

import json
from pathlib import Path

import numpy as np

V = 1024
W = 128
PAIRS = 1000
SEED = 20260114

def main():
    rng = np.random.default_rng(SEED)
    errs = np.empty(PAIRS, dtype=np.float64)
    for i in range(PAIRS):
        e = rng.standard_normal(V)
        f = rng.standard_normal(V)
        e /= np.linalg.norm(e)
        f /= np.linalg.norm(f)
        p = rng.uniform(-1.0, 1.0, size=(V, W))
        ep = e @ p
        fp = f @ p
        cos_true = float(e @ f)
        cos_proj = float(ep @ fp / (np.linalg.norm(ep) * np.linalg.norm(fp)))
        errs[i] = abs(cos_proj - cos_true)
    result = {
        "v": V,
        "w": W,
        "pairs": PAIRS,
        "seed": SEED,
        "mean_abs_cos_error": float(errs.mean()),
        "max_abs_cos_error": float(errs.max()),
    }
    out = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "jl_oracle.json"
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, indent=2, sort_keys=True))

if __name__ == "__main__":
    main()
