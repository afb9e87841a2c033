"""Regenerate the shipped synthetic dataset and its generating truth.

Usage: python scripts/make_fixture.py [output_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

from simfex.simulate import GenConfig, generate, targets_for, true_theta

SEED = 2024


def main(out_dir: str = "src/simfex/data") -> None:
    out = Path(out_dir)
    config = GenConfig.default("normal", "linear", nsr=0.8, J=5, n=1000, seed=SEED)
    sim = generate(config, np.random.default_rng(SEED))
    lines = ["y,w1,w2"]
    for y, (w1, w2) in zip(sim.y, sim.replicates):
        lines.append(f"{float(y)!r},{float(w1)!r},{float(w2)!r}")
    (out / "synthetic_linear.csv").write_text("\n".join(lines) + "\n")
    theta = true_theta(config)
    names, T = targets_for(config.J)
    truth = {
        "config": config.to_dict(),
        "sigma2_u": sim.sigma2_u,
        "cutpoints": list(sim.scheme.cutpoints),
        "true_theta": theta.tolist(),
        "targets": dict(zip(names, (T @ theta).tolist())),
    }
    (out / "synthetic_linear_truth.json").write_text(json.dumps(truth, indent=2) + "\n")


if __name__ == "__main__":
    main(*sys.argv[1:])
