"""Smoke test for the soft_hjb_py extension module.

Build the module first, either with maturin (``maturin develop -m
crates/python/Cargo.toml``) or with ``cargo build -p soft-hjb-py --release``;
in the latter case this script loads ``target/release/libsoft_hjb_py.so``
directly.
"""

import importlib.util
import json
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import soft_hjb_py

        return soft_hjb_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libsoft_hjb_py.so", "libsoft_hjb_py.dylib", "soft_hjb_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                spec = importlib.util.spec_from_file_location("soft_hjb_py", path)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("soft_hjb_py not found; build it with `cargo build -p soft-hjb-py --release`")


def main():
    m = load_module()

    cfg = m.RunConfig.desk_1d()
    problem = cfg.problem()
    assert problem.state_dim == 1 and problem.control_dim == 1
    assert math.isclose(problem.rho, 1.0)
    assert len(problem.drift([0.5], [0.1])) == 1

    roundtrip = m.RunConfig.from_json(cfg.to_json())
    assert json.loads(roundtrip.to_json()) == json.loads(cfg.to_json())
    try:
        m.RunConfig.from_json('{"bogus": 1}')
        raise AssertionError("unknown keys must be rejected")
    except ValueError:
        pass

    ric = m.riccati(cfg)
    assert ric["p"][0][0] > 0.0

    oracle = m.exact_pi(cfg, grid_n=128)
    assert oracle["converged"]
    assert oracle["increments"][-1] < 1e-6

    cfg.max_iters = 2
    cfg.set_epochs(50, 20)
    sol = m.solve(cfg)
    assert sol.iteration == 2
    assert sol.ledger_csv.startswith("n,L_value")
    v = sol.values([[0.0], [1.0]])
    assert all(math.isfinite(x) for x in v)

    again = m.Solution.from_checkpoint(sol.to_checkpoint())
    assert again.values([[0.0], [1.0]]) == v

    report = sol.evaluate(paths=16, seed=3)
    assert math.isfinite(report["mean"]) and report["stderr"] >= 0.0

    summary = json.loads(m.verify("pinsker", trials=200, seed=1)[0])
    assert summary["violations"] == 0

    print("soft_hjb_py smoke test passed")


if __name__ == "__main__":
    main()
