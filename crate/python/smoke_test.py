"""Smoke test for the gradphi Python bindings.

Build and install first:

    pip install --no-build-isolation ./crates/python
"""

import json
import math

import gradphi_py as gp


def main():
    v = gp.Potential.soft_quartic(0.5)
    assert abs(v.dv(0.3) + v.dv(-0.3)) < 1e-12
    assert v.c_minus <= v.ddv(0.7) <= v.c_plus

    grid = gp.Torus(2, 3)
    assert len(grid) == 49 and grid.side == 7
    src = gp.NoiseSource(42)
    u = gp.gff_sample(grid, src)
    assert abs(sum(u)) < 1e-10
    g = grid.gradient(u)
    div = grid.divergence(g)
    lap = grid.laplacian(u)
    assert max(abs(a - b) for a, b in zip(div, lap)) < 1e-12

    a = src.normal("forward", [1, -2], 5)
    assert a == gp.NoiseSource(42).normal("forward", [1, -2], 5)

    phi = gp.corrector(grid, gp.Potential.quadratic(), [0.5, 0.0], src, -9.0)
    assert len(phi) == 49 and all(math.isfinite(x) for x in phi)

    est = json.loads(gp.surface_tension_gradient([0.5, 0.0], 3, gp.Potential.quadratic(), 8, src))
    assert abs(est["mean"][0] - 0.5) < 5 * max(est["se"][0], 1e-9) + 1e-9

    exponent, _, r2 = gp.fit_power_law([1.0, 2.0, 4.0, 8.0], [3.0, 0.75, 0.1875, 0.046875])
    assert abs(exponent + 2.0) < 1e-12 and r2 > 0.999999

    config = json.dumps({
        "schema_version": 1,
        "seed": 3,
        "replicas": 1,
        "experiment": "heatkernel",
        "params": {"dim": 2, "radius": 3, "environment": {"kind": "constant", "a": 1.0}},
    })
    report, tables, passed = gp.run(config)
    assert passed, report
    assert tables[0][0] == "heat_kernel.csv"

    try:
        gp.Potential.kinked(2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("kinked(2.0) should be rejected")

    print("gradphi_py", gp.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
