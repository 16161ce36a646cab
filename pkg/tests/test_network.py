import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgsync.network import (FT_TO_KM, V_BASE, Line, Load, Network, NetworkError, NetworkSolver,
                            line_impedance, phasor, solve, switch_voltage)


def two_bus(p=10.0, q=5.0, length=500.0):
    return Network([1, 2], [Line(1, 2, 0.52, 0.37, length)], [Load(2, p, q)], {1: 1}, pcc_bus=2, grid_bus=3)


def fixed_point_v2(v1, z, s_va, iters=500):
    # oracle: V2 = V1 - Z conj(S / V2), iterated from flat start
    v2 = v1
    for _ in range(iters):
        v2 = v1 - z * (s_va / v2).conjugate()
    return v2


def test_line_impedance_units():
    ln = Line(1, 2, 0.52, 0.37, 500)
    assert line_impedance(ln) == pytest.approx(complex(0.52, 0.37) * 500 * 0.0003048)
    assert FT_TO_KM == pytest.approx(0.0003048)


@pytest.mark.parametrize("p,q", [(10, 5), (3, -2), (0, 0), (25, 10)])
def test_two_bus_matches_fixed_point(p, q):
    net = two_bus(p, q)
    v1 = complex(V_BASE, 0)
    sol = solve(net, {1: v1})
    assert sol.converged
    z = line_impedance(net.lines[0])
    v2 = fixed_point_v2(v1, z, complex(p, q) * 1e3)
    assert abs(sol.bus_voltage[2] - v2) < 1e-7
    # the source supplies load plus I^2 R
    i = (v1 - v2) / z
    assert sol.dg_injection[1][0] == pytest.approx(p + abs(i) ** 2 * z.real / 1e3, abs=1e-8)


def test_switch_voltage_examples():
    assert switch_voltage(1, -1) == pytest.approx(2.0)
    assert switch_voltage(phasor(1, 30), phasor(1, 30)) == 0
    assert switch_voltage(1.01, 0.975) == pytest.approx(0.035)


phasors = st.builds(lambda m, a: m * cmath.exp(1j * a), st.floats(0, 2), st.floats(-math.pi, math.pi))


@settings(max_examples=300, deadline=None)
@given(phasors, phasors)
def test_switch_voltage_bounds(a, b):
    v = switch_voltage(a, b)
    assert abs(abs(a) - abs(b)) - 1e-12 <= v <= abs(a) + abs(b) + 1e-12


def feeder_network(**kw):
    lines = [Line(1, 2, 0.52, 0.37, 500), Line(2, 3, 0.29, 0.13, 2000), Line(3, 4, 0.78, 0.42, 1000),
             Line(3, 5, 0.19, 0.12, 100)]
    loads = [Load(1, 10, 10), Load(2, 5, 2), Load(3, 3, 3), Load(4, 2, 2), Load(5, 3, 3)]
    return Network([1, 2, 3, 4, 5], lines, loads, {1: 1, 2: 2, 3: 3, 4: 4}, 5, 6, **kw)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(195, 215), min_size=4, max_size=4))
def test_power_balance(angles_deg, mags):
    net = feeder_network()
    sol = solve(net, {k + 1: phasor(mags[k], angles_deg[k]) for k in range(4)})
    assert sol.converged
    gen = sum(p for p, _ in sol.dg_injection.values())
    load = sum(ld.p for ld in net.loads)
    assert gen == pytest.approx(load + sol.losses_kw, abs=1e-6)


def test_closed_switch_pins_pcc_to_grid():
    net = feeder_network(switch_closed=True)
    grid = phasor(1.01 * V_BASE, 3.0)
    sol = solve(net, {k: phasor(V_BASE, 0) for k in range(1, 5)}, grid)
    assert sol.bus_voltage[5] == grid
    gen = sum(p for p, _ in sol.dg_injection.values()) + sol.grid_injection[0]
    assert gen == pytest.approx(sum(ld.p for ld in net.loads) + sol.losses_kw, abs=1e-6)


def test_network_validation():
    with pytest.raises(NetworkError):
        Network([1, 2, 3], [Line(1, 2, 0.5, 0.3, 100)], [], {1: 1}, 2, 9)  # bus 3 isolated
    with pytest.raises(NetworkError):
        Network([1, 2], [Line(1, 2, 0.5, 0.3, 100)], [Load(7, 1, 1)], {1: 1}, 2, 9)
    with pytest.raises(ValueError):
        Line(1, 2, 0.0, 0.0, 100)


def test_droop_step_obeys_droop_laws():
    net = feeder_network()
    solver = NetworkSolver(net)
    kP = np.array([4, 2, 4 / 3, 1]) * math.pi
    kQ = np.array([0.4, 0.2, 0.13, 0.1])
    th = np.zeros(4)
    w = np.full(4, 376.0)
    v = np.full(4, 208.0)
    w_set = np.full(4, 440.0)
    v_set = np.full(4, 210.0)
    gamma = np.full(4, 0.3)
    sol, th1, w1, v1 = solver.droop_step(th, w, v, w_set, v_set, kP, kQ, gamma, 1e-3, 120 * math.pi)
    p = np.array([sol.dg_injection[d][0] for d in range(1, 5)])
    q = np.array([sol.dg_injection[d][1] for d in range(1, 5)])
    assert np.allclose(w1, 0.7 * w + 0.3 * (w_set - kP * p), atol=1e-9)
    assert np.allclose(v1, 0.7 * v + 0.3 * (v_set - kQ * q), atol=1e-9)
    assert np.allclose(th1, th + 1e-3 * (w1 - 120 * math.pi), atol=1e-10)
    assert np.allclose([abs(sol.bus_voltage[d]) for d in range(1, 5)], v1, atol=1e-6)
