"""Regenerate the offline golden files: ``python3 tests/data/make_golden.py``.

Only rerun after an intentional change to the numerics; the test compares
the command's output against these files byte for byte.
"""
import os

from smoothsvm.cli import main
from smoothsvm.simgen import ScenarioConfig, sample_scenario

HERE = os.path.dirname(os.path.abspath(__file__))
ARGS = ["--lam", "0.05", "--delta", "0.1", "--h", "0.5"]


def write_fixture(path):
    data = sample_scenario(ScenarioConfig(case=1, cov_type="III", p=6, n=120, seed=7))
    with open(path, "w") as fh:
        fh.write(",".join(["y"] + [f"x{j}" for j in range(1, 7)]) + "\n")
        for label, row in zip(data.y, data.X):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


if __name__ == "__main__":
    fixture = os.path.join(HERE, "fixture.csv")
    write_fixture(fixture)
    raise SystemExit(main(["offline", "--input", fixture, "--out", os.path.join(HERE, "golden_offline"), *ARGS]))
