import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cimf.errors import RasterError
from cimf.flood import (FloodParams, read_precip, simulate, synthetic_dem, synthetic_precip,
                        write_precip)
from cimf.raster import Raster

ND = -9999.0


def test_zero_rain_leaves_the_grid_dry():
    dem = synthetic_dem(16, seed=3)
    depth, budget = simulate(dem, [0.0] * 5)
    inside = ~dem.nodata_mask
    assert np.all(depth.values[inside] == 0.0)
    assert np.all(depth.values[~inside] == ND)
    assert budget.precip_in == budget.stored == budget.outflow == budget.infiltrated == 0.0


def test_single_cell_accumulates_rain_minus_loss():
    dem = Raster(np.array([[5.0]]))
    rates = [0.01, 0.0, 0.03, 0.002]
    p = FloodParams(infiltration_rate=0.004, timestep=2.0)
    depth, budget = simulate(dem, rates, p)
    # sequential oracle: add r*dt, then remove up to f*dt
    d = 0.0
    for r in rates:
        d = max(0.0, d + r * 2.0 - 0.004 * 2.0)
    assert depth.values[0, 0] == pytest.approx(d, abs=1e-15)
    assert budget.outflow == 0.0


def test_isolated_cell_drains_geometrically_to_its_collar():
    # one domain cell ringed by nodata: every sweep moves k/2 of its head out
    vals = np.full((3, 3), ND)
    vals[1, 1] = 2.0
    dem = Raster(vals)
    k, sweeps, rate = 0.6, 3, 0.2
    depth, budget = simulate(dem, [rate], FloodParams(0.0, k, sweeps, 1.0))
    expected = rate * (1 - k / 2) ** sweeps
    assert depth.values[1, 1] == pytest.approx(expected, rel=1e-14)
    assert budget.outflow == pytest.approx(rate - expected, rel=1e-14)


def test_two_cell_slope_hand_trace():
    dem = Raster(np.array([[1.0, 0.0]]))
    depth, budget = simulate(dem, [0.1, 0.1], FloodParams(0.0, 1.0, 1, 1.0))
    assert depth.values.tolist() == [[0.0, pytest.approx(0.4, abs=1e-15)]]
    assert budget.outflow == 0.0


def test_three_by_three_pit_hand_trace():
    # closed edges, centre pit, k=1, one sweep, two steps of 1/16 m; traced by
    # hand in exact dyadic arithmetic. In step two cell (2,1) faces a four-way
    # tie (N, NE, W, NW all at 1.0) and must pick N.
    dem = Raster(np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]))
    p = FloodParams(0.0, 1.0, 1, 1.0)
    one, _ = simulate(dem, [0.0625], p)
    assert one.values.tolist() == [[0, 0, 0], [0, 0.5625, 0], [0, 0, 0]]
    two, budget = simulate(dem, [0.0625, 0.0625], p)
    assert two.values.tolist() == [[0, 0, 0], [0, 1.03125, 0.03125], [0, 0.03125, 0.03125]]
    assert budget.stored == 1.125 and budget.outflow == 0.0


def test_tie_break_prefers_east_over_west():
    dem = Raster(np.array([[0.0, 5.0, 0.0]]))
    depth, _ = simulate(dem, [0.25], FloodParams(0.0, 1.0, 1, 1.0))
    assert depth.values.tolist() == [[0.25, 0.0, 0.5]]


def test_closed_grid_has_no_outflow():
    dem = synthetic_dem(12, seed=5, collar=False)
    _, budget = simulate(dem, synthetic_precip(8, seed=1))
    assert budget.outflow == 0.0
    assert budget.closure_error() <= 1e-12


def test_infiltration_capacity_above_rain_absorbs_everything():
    dem = synthetic_dem(10, seed=2)
    rates = [0.01, 0.02, 0.005]
    depth, budget = simulate(dem, rates, FloodParams(infiltration_rate=0.05))
    assert budget.stored == 0.0 and budget.outflow == 0.0
    assert budget.infiltrated == pytest.approx(budget.precip_in, rel=1e-12)


def test_interior_nodata_hole_is_rejected():
    vals = np.ones((5, 5))
    vals[2, 2] = ND
    with pytest.raises(RasterError):
        simulate(Raster(vals), [0.1])


def test_negative_rate_is_rejected():
    with pytest.raises(ValueError):
        simulate(Raster(np.ones((2, 2))), [0.1, -0.01])


@pytest.mark.parametrize("bad", [dict(routing_coefficient=0.0), dict(routing_coefficient=1.5),
                                 dict(routing_sweeps=0), dict(timestep=0.0),
                                 dict(infiltration_rate=-1.0), dict(routing_sweeps=1.5)])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        FloodParams(**bad)


def test_precip_csv_round_trip():
    rates = [0.0, 0.1, 1e-7, 0.333]
    assert read_precip(write_precip(rates)) == rates
    assert read_precip("3,0.5\n2,0.25\n") == [0.25, 0.5]
    with pytest.raises(ValueError):
        read_precip("0,1\n2,1\n")


def test_synthetic_inputs_are_deterministic():
    assert synthetic_dem(8, seed=4) == synthetic_dem(8, seed=4)
    assert synthetic_precip(10, 1, label="2001") == synthetic_precip(10, 1, label="2001")
    assert synthetic_precip(10, 1, label="2001") != synthetic_precip(10, 1, label="2002")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), size=st.integers(3, 10), collar=st.booleans(),
       rain=st.lists(st.floats(0, 0.2), min_size=1, max_size=6),
       f=st.floats(0, 0.05), k=st.floats(0.01, 1.0), sweeps=st.integers(1, 6),
       dt=st.floats(0.1, 3.0))
def test_mass_balance_closes(seed, size, collar, rain, f, k, sweeps, dt):
    dem = synthetic_dem(size, seed=seed, collar=collar)
    depth, b = simulate(dem, rain, FloodParams(f, k, sweeps, dt))
    assert b.closure_error() <= 1e-9
    inside = ~dem.nodata_mask
    assert np.all(depth.values[inside] >= 0.0)
    assert b.precip_in == pytest.approx(math.fsum(r * dt for r in rain) * inside.sum(), rel=1e-12,
                                        abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(1.0, 4.0))
def test_more_rain_never_lowers_total_water_on_a_flat_closed_grid(seed, scale):
    # on a flat closed grid nothing routes, so depth is rain minus loss per cell
    dem = Raster(np.zeros((8, 8)))
    rates = synthetic_precip(6, seed=seed)
    lo, _ = simulate(dem, rates, FloodParams(infiltration_rate=0.001))
    hi, _ = simulate(dem, [r * scale for r in rates], FloodParams(infiltration_rate=0.001))
    assert np.all(hi.values >= lo.values)
