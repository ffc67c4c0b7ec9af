import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimf.errors import MisalignedError, RasterError
from cimf.raster import Raster, dumps, loads, require_aligned

SAMPLE = """ncols 3
nrows 2
xllcorner 100
yllcorner 200.5
cellsize 30
NODATA_value -9999
1 2 3
4 -9999 6.25
"""


def test_parse_reference_grid():
    r = loads(SAMPLE)
    assert (r.nrows, r.ncols) == (2, 3)
    assert (r.xllcorner, r.yllcorner, r.cellsize, r.nodata) == (100.0, 200.5, 30.0, -9999.0)
    assert r.values[0].tolist() == [1.0, 2.0, 3.0]  # first line is the northern row
    assert r.nodata_mask.tolist() == [[False, False, False], [False, True, False]]


@pytest.mark.parametrize("text", [
    SAMPLE.replace("nrows 2", "nrows 3"),
    SAMPLE.replace("cellsize 30", "cellsize 0"),
    SAMPLE.replace("6.25", "abc"),
    SAMPLE.replace("ncols 3\n", ""),
])
def test_malformed_grids_are_rejected(text):
    with pytest.raises(RasterError):
        loads(text)


finite = st.floats(min_value=-1e12, max_value=1e12, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(values=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       x=finite, y=finite, cs=st.floats(min_value=1e-3, max_value=1e4))
@example(values=np.array([[-0.0]]), x=0.0, y=0.0, cs=1.0)
def test_text_round_trip_is_bit_exact(values, x, y, cs):
    r = Raster(values, x, y, cs)
    back = loads(dumps(r))
    assert back == r
    assert back.values.tobytes() == r.values.tobytes()


def test_alignment_check():
    a = Raster(np.zeros((2, 2)))
    b = Raster(np.zeros((2, 2)), cellsize=2.0)
    assert require_aligned([a, a.like(np.ones((2, 2)))]) == a.header
    with pytest.raises(MisalignedError):
        require_aligned([a, b])
