"""Smoke test for the tim_admission extension module.

Build and install first, e.g. `pip install maturin && maturin develop -m crates/py/Cargo.toml`.
"""

import json

import tim_admission as tim


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    # Interference-free users can all be admitted, even at r = 1.
    free = tim.Topology(4)
    res = tim.run_pipeline(free, rank=1, seed=7)
    assert res.n0 == 4, res
    assert sorted(res.admitted) == [1, 2, 3, 4]
    assert res.residual <= 1e-3

    # Fully connected: exactly r users fit.
    full = tim.Topology.fully_connected(5)
    assert tim.run_pipeline(full, rank=2).n0 == 2
    assert tim.exhaustive_oracle(full, rank=2)[0] == 2
    assert tim.orthogonal_baseline(8, 3) == 3

    topo = tim.Topology.random(8, 45, seed=3)
    assert len(topo) == 45
    assert tim.Topology.parse(topo.to_text()).to_text() == topo.to_text()
    res = tim.run_pipeline(topo, rank=3, seed=1)
    n_max, best = tim.exhaustive_oracle(topo, rank=3)
    assert 3 <= res.n0 <= n_max, (res.n0, n_max)
    feasible, residual = tim.feasibility_check(topo, res.admitted, rank=3, seed=99)
    assert feasible, residual
    report = json.loads(res.to_json())
    assert report["n0"] == res.n0

    # Geometry: the projection is idempotent and kills vertical directions.
    x = tim.FactoredPoint.random(6, 2, seed=5)
    eta = tim.FactoredPoint.random(6, 2, seed=6)
    h = tim.project_horizontal(x, (eta.u, eta.v))
    hh = tim.project_horizontal(x, h)
    assert all(close(a, b) for ra, rb in zip(h[0], hh[0]) for a, b in zip(ra, rb))
    assert tim.inner(x, h, h) > 0
    y = tim.retract(x, h)
    assert len(y.matrix()) == 6

    print("smoke test passed")


if __name__ == "__main__":
    main()
