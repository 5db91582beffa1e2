"""Regenerate frozen_oracles.json from the reference oracles (run from tests/)."""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
import oracles  # noqa: E402


def dln_cases(n_cases=12, seed=20241):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        depth = int(rng.integers(2, 6))
        widths = [int(v) for v in rng.integers(1, 5, size=depth + 1)]
        batch = int(rng.integers(1, 6))
        weights = [rng.normal(size=(b, a)) / np.sqrt(a) for a, b in zip(widths[:-1], widths[1:])]
        x = rng.normal(size=(batch, widths[0]))
        y = rng.normal(size=(batch, widths[-1]))
        premult = [1.0] * depth
        skips = [0] * depth
        f_star = oracles.equilibrated_energy_oracle(weights, premult, skips, x, y)
        cases.append(
            {
                "widths": widths,
                "weights": [w.tolist() for w in weights],
                "x": x.tolist(),
                "y": y.tolist(),
                "equilibrated_energy": f_star,
            }
        )
    return cases


def origin_cases(seed=777):
    rng = np.random.default_rng(seed)
    out = []
    for widths in ([2, 3, 2], [2, 2, 2, 2]):
        x = rng.normal(size=(16, widths[0]))
        y = rng.normal(size=(16, widths[-1]))
        depth = len(widths) - 1

        def f(theta):
            return oracles.equilibrated_energy_oracle(
                oracles.split_params(theta, widths), [1.0] * depth, [0] * depth, x, y
            )

        n = sum(a * b for a, b in zip(widths[:-1], widths[1:]))
        hess = oracles.fd_hessian(f, np.zeros(n), h=1e-3)
        out.append(
            {
                "widths": widths,
                "x": x.tolist(),
                "y": y.tolist(),
                "hessian_eigenvalues": np.linalg.eigvalsh(hess).tolist(),
            }
        )
    return out


if __name__ == "__main__":
    payload = {"dln": dln_cases(), "origin": origin_cases()}
    Path(__file__).with_name("frozen_oracles.json").write_text(json.dumps(payload, indent=1) + "\n")
