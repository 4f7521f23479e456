"""Smoke test for the fsdopt_py extension.

Build first with `cargo build --release -p fsdopt-py`; the script loads
target/release/libfsdopt_py.so (or the path in FSDOPT_PY_LIB).
"""

import importlib.machinery
import importlib.util
import os
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    default = ROOT / "target" / "release" / "libfsdopt_py.so"
    path = pathlib.Path(os.environ.get("FSDOPT_PY_LIB", default))
    if not path.exists():
        sys.exit(f"extension not found at {path}; run `cargo build --release -p fsdopt-py`")
    loader = importlib.machinery.ExtensionFileLoader("fsdopt_py", str(path))
    spec = importlib.util.spec_from_loader("fsdopt_py", loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    fs = load_extension()

    data = fs.appendix()
    assert (data.scenarios, data.assets) == (18, 10), data
    assert data.row_labels[0] == "1937"
    two = data.select([0, 1])
    ind = fs.indicators(two, [0.3, 0.7], 0.4)
    assert abs(ind["mean"] - 0.0629) < 1e-4, ind

    ref = fs.Reference.from_portfolio(two, [0.3, 0.7], 0.05)
    assert fs.g_residual(two, [0.3, 0.7], ref) <= 0.0
    assert fs.g_residual(two, [1.0, 0.0], ref) > 0.0

    y = fs.project_box([0.9, 0.8])
    assert abs(sum(y) - 1.0) < 1e-12 and min(y) >= 0.0, y

    point, lam = fs.star_project(two, [1.0, 0.0], ref, [0.3, 0.7])
    assert 0.0 <= lam < 1.0 and fs.g_residual(two, point, ref) <= 0.0

    problem = fs.Problem.load("preset:exp-3comp-mean-anal")
    step = problem.reference
    point, lam = fs.star_project(problem.dataset, [1.0, 0.0, 0.0], step, [0.0, 0.0, 1.0], "analytic")
    assert fs.h_residual(problem.dataset, point, step) <= 0.0
    assert problem.assess(point)["feasible"]

    quick = fs.Problem.load("preset:exp-2asset-c0659")
    report = quick.solve(seed=3)
    assert report["feasible"] and report["objective_value"] >= 0.0635, report
    again = quick.solve(seed=3, threads=2)
    assert report == again
    assert "wall_time_s" not in report

    assert "exp-10comp-mean" in fs.presets()
    try:
        fs.load_csv("/nonexistent.csv")
    except OSError:
        pass
    else:
        raise AssertionError("missing file accepted")

    print(f"fsdopt_py smoke test OK: mean {report['objective_value']:.5f}, weights {report['weights']}")


if __name__ == "__main__":
    main()
