import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ma_lab.fieldio import file_hash, read_field, read_header, write_columns, write_field
from ma_lab.grid import GridError, GridSpec, PotentialField, ScalarField


@pytest.mark.parametrize("suffix", [".bin", ".csv"])
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([2, 3]))
def test_roundtrip_is_exact(tmp_path_factory, suffix, seed, dim):
    g = GridSpec.box(-1.0, 0.7, 6, dim)
    vals = np.random.default_rng(seed).normal(size=g.shape) * 10 ** np.random.default_rng(seed).uniform(-8, 8)
    path = tmp_path_factory.mktemp("f") / f"u{suffix}"
    write_field(path, ScalarField(g, vals), {"note": "x"})
    back = read_field(path)
    assert isinstance(back, PotentialField)
    assert back.grid == g
    assert np.array_equal(back.values, vals)
    assert read_header(path)["meta"] == {"note": "x"}


def test_header_is_required(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope\n")
    with pytest.raises(GridError):
        read_field(p)


def test_truncated_body_is_rejected(tmp_path):
    g = GridSpec.box(0, 1, 5)
    p = tmp_path / "u.bin"
    write_field(p, ScalarField(g, np.zeros(g.shape)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(GridError):
        read_field(p)


def test_hash_and_columns(tmp_path):
    g = GridSpec.box(0, 1, 5)
    p = tmp_path / "u.csv"
    write_field(p, ScalarField(g, np.ones(g.shape)))
    assert len(file_hash(p)) == 64
    q = tmp_path / "cols.csv"
    write_columns(q, g, {"a": np.arange(g.size, dtype=float)}, mask=g.interior(1))
    rows = np.loadtxt(q, delimiter=",", skiprows=1)
    assert rows.shape == (9, 3)
    assert q.read_text().splitlines()[0] == "x1,x2,a"
