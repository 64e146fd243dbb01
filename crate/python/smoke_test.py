"""Smoke test for the `bethe` extension module.

Build and install first:  pip install ./crates/python  (or `maturin develop -m crates/python/Cargo.toml`)
Then run:                 python python/smoke_test.py
"""

import math

import bethe


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # semiring
    assert bethe.combine(1.0, 2.0, "inf") == 2.0
    c = bethe.combine(0.0, 0.0, 1.0)
    assert close(c, math.log(2.0), 1e-12), c

    # generators and the model file format
    m = bethe.generate("random-tree", labels=3, seed=4, n=8)
    assert m.num_vars == 8 and m.num_factors == 7
    again = bethe.Model.from_json(m.to_json())
    assert again.to_json() == m.to_json()
    assert bethe.generate("grid", rows=3, cols=3, interaction="supermodular_ising").is_supermodular()

    # max-sum diffusion is tight on trees
    phi_inf = bethe.log_partition(m, "inf")
    d = bethe.Diffusion(m, float("inf"))
    converged, sweeps, residual, dual = d.run(1e-10, 10_000)
    assert converged, (sweeps, residual)
    assert close(dual, phi_inf, 1e-8), (dual, phi_inf)
    sols, truncated = bethe.decode(m, d.messages, 1e-8)
    assert not truncated
    assert sorted(sols) == sorted(bethe.ground_states(m))
    for x in sols:
        assert close(m.evaluate(x), phi_inf, 1e-8)

    # double loop at finite temperature reproduces exact tree marginals
    dl = bethe.DoubleLoop(m, 1.0)
    for _ in range(200):
        step = dl.outer_step(inner_tol=1e-12)
        if step["bp_residual"] <= 1e-10:
            break
    exact = bethe.exact_marginals(m, 1.0)
    got = dl.bp_marginals()
    err = max(
        abs(a - b)
        for ta, tb in zip(exact["unary"], got["unary"])
        for a, b in zip(ta, tb)
    )
    assert err <= 1e-6, err

    # one-shot solve and compare
    out = bethe.solve(m, "double_loop", "inf")
    assert out["converged"] and out["beta"] == "inf"
    assert out["trace_csv"].startswith("outer_iter,log10_bp_residual")
    rep = bethe.compare(m, "diffusion", "inf")
    assert abs(rep["dual_gap"]) <= 1e-8 and rep["ground_state_sets_equal"]

    # errors
    try:
        bethe.solve(m, beta=0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("beta=0 accepted")
    big = bethe.generate("grid", rows=5, cols=5, labels=2)
    try:
        bethe.log_partition(big, 1.0)
    except bethe.CapacityError:
        pass
    else:
        raise AssertionError("cap not enforced")

    print("smoke test OK")


if __name__ == "__main__":
    main()
