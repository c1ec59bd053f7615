import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hthc.data import (BinaryFormatError, DataMatrix, GapMemory, ModelState,
                       ParseError, column_sq_norms, load_binary, load_libsvm,
                       load_vector, save_binary, save_vector,
                       scale_columns_by_labels, synth_lasso, synth_svm)


def test_matrix_layout_and_norms():
    m = DataMatrix([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert m.d == 2 and m.n == 3
    assert m.values.flags.f_contiguous
    assert m.dtype == np.float32
    np.testing.assert_allclose(m.col_sq_norms, [17.0, 29.0, 45.0])
    np.testing.assert_array_equal(m.column(1), [2.0, 5.0])


def test_matrix_validation():
    with pytest.raises(ValueError):
        DataMatrix(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        DataMatrix(np.ones(4))
    with pytest.raises(ValueError):
        DataMatrix([[np.inf, 1.0]])


def test_norm_cache_matches_recompute(rng):
    vals = rng.standard_normal((37, 19)).astype(np.float32)
    m = DataMatrix(vals)
    fresh = column_sq_norms(m.values)
    np.testing.assert_allclose(m.col_sq_norms, fresh, rtol=1e-6)


def test_transposed_swaps_dims(rng):
    m = DataMatrix(rng.standard_normal((4, 7)))
    t = m.transposed()
    assert (t.d, t.n) == (7, 4)
    np.testing.assert_array_equal(t.values, m.values.T)


def test_scale_columns_by_labels():
    m = DataMatrix([[1.0, 2.0], [3.0, 4.0]])
    s = scale_columns_by_labels(m, np.array([1.0, -1.0]))
    np.testing.assert_array_equal(s.values, [[1.0, -2.0], [3.0, -4.0]])
    with pytest.raises(ValueError):
        scale_columns_by_labels(m, np.ones(3))


# ---------------------------------------------------------------------------
# LIBSVM parsing.
# ---------------------------------------------------------------------------

def test_libsvm_basic(tmp_path):
    path = tmp_path / "toy.svm"
    path.write_text("+1 1:1 3:2\n-1 2:4\n")
    m, labels = load_libsvm(path)
    assert (m.d, m.n) == (3, 2)
    np.testing.assert_array_equal(m.values[:, 0], [1.0, 0.0, 2.0])
    np.testing.assert_array_equal(m.values[:, 1], [0.0, 4.0, 0.0])
    np.testing.assert_array_equal(labels, [1.0, -1.0])


def test_libsvm_single_line(tmp_path):
    path = tmp_path / "one.svm"
    path.write_text("+1 1:5\n")
    m, labels = load_libsvm(path)
    assert (m.d, m.n) == (1, 1)
    assert m.values[0, 0] == 5.0


def test_libsvm_non_ascending_names_line(tmp_path):
    path = tmp_path / "bad.svm"
    path.write_text("+1 1:1\n-1 3:1 2:1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_libsvm(path)


def test_libsvm_malformed_token(tmp_path):
    path = tmp_path / "bad.svm"
    path.write_text("+1 1:1\n+1 nonsense\n")
    with pytest.raises(ParseError, match="line 2"):
        load_libsvm(path)


def test_libsvm_empty_file(tmp_path):
    path = tmp_path / "empty.svm"
    path.write_text("")
    with pytest.raises(ParseError):
        load_libsvm(path)


def test_libsvm_densify_flag(tmp_path):
    path = tmp_path / "toy.svm"
    path.write_text("+1 1:1\n")
    with pytest.raises(ValueError):
        load_libsvm(path, densify=False)


@given(st.lists(
    st.lists(st.tuples(st.integers(1, 12),
                       st.floats(-100, 100, allow_nan=False, width=32)),
             min_size=0, max_size=6),
    min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_libsvm_reconstructs_listed_entries(tmp_path_factory, lines):
    # Every parsed line's dense column, restricted to listed indices,
    # carries exactly the listed values.
    cleaned = []
    for entries in lines:
        seen = {}
        for idx, val in entries:
            seen[idx] = val
        cleaned.append(sorted(seen.items()))
    text = "\n".join(
        "+1 " + " ".join(f"{i}:{v!r}" for i, v in entries)
        for entries in cleaned) + "\n"
    if not any(entries for entries in cleaned):
        return  # no features at all: rejected by the loader
    path = tmp_path_factory.mktemp("libsvm") / "case.svm"
    path.write_text(text)
    m, _ = load_libsvm(path, dtype=np.float64)
    for col, entries in enumerate(cleaned):
        for idx, val in entries:
            assert m.values[idx - 1, col] == val


# ---------------------------------------------------------------------------
# Binary container.
# ---------------------------------------------------------------------------

def test_binary_round_trip(tmp_path, rng):
    m = DataMatrix(rng.standard_normal((2, 3)).astype(np.float32))
    path = tmp_path / "m.bin"
    save_binary(m, path)
    back = load_binary(path)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back.values, m.values)


def test_binary_round_trip_f64(tmp_path, rng):
    m = DataMatrix(rng.standard_normal((5, 4)), dtype=np.float64)
    path = tmp_path / "m64.bin"
    save_binary(m, path)
    np.testing.assert_array_equal(load_binary(path).values, m.values)


def test_binary_exact_size(tmp_path):
    # header magic(4) + version(1) + d(8) + n(8) + tag(1) + one f32 payload
    m = DataMatrix(np.array([[0.5]], dtype=np.float32))
    path = tmp_path / "tiny.bin"
    save_binary(m, path)
    assert path.stat().st_size == 4 + 1 + 8 + 8 + 1 + 4


def test_binary_exact_layout(tmp_path):
    # Pin the wire format: magic, version, little-endian u64 dims, dtype
    # tag, then column-major scalars.
    import struct

    m = DataMatrix(np.array([[1.0, 3.0], [2.0, 4.0]], dtype=np.float32))
    path = tmp_path / "layout.bin"
    save_binary(m, path)
    expected = (b"HTHC" + bytes([1]) + struct.pack("<QQB", 2, 2, 1)
                + struct.pack("<4f", 1.0, 2.0, 3.0, 4.0))
    assert path.read_bytes() == expected


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + bytes(30))
    with pytest.raises(BinaryFormatError, match="magic"):
        load_binary(path)


def test_binary_truncated(tmp_path):
    m = DataMatrix(np.ones((4, 4), dtype=np.float32))
    path = tmp_path / "trunc.bin"
    save_binary(m, path)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(BinaryFormatError, match="truncated"):
        load_binary(path)


def test_binary_bad_version_and_tag(tmp_path):
    m = DataMatrix(np.ones((1, 1), dtype=np.float32))
    path = tmp_path / "v.bin"
    save_binary(m, path)
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(BinaryFormatError, match="version"):
        load_binary(path)
    data[4] = 1
    data[21] = 77  # dtype tag byte
    path.write_bytes(bytes(data))
    with pytest.raises(BinaryFormatError, match="dtype"):
        load_binary(path)


@given(st.integers(1, 6), st.integers(1, 6), st.booleans(), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_binary_round_trip_property(tmp_path_factory, d, n, double, seed):
    gen = np.random.default_rng(seed)
    dtype = np.float64 if double else np.float32
    m = DataMatrix(gen.standard_normal((d, n)), dtype=dtype)
    path = tmp_path_factory.mktemp("bin") / "m.bin"
    save_binary(m, path)
    back = load_binary(path)
    assert back.dtype == m.dtype and (back.d, back.n) == (d, n)
    np.testing.assert_array_equal(back.values, m.values)


def test_vector_round_trip(tmp_path, rng):
    vec = rng.standard_normal(9).astype(np.float32)
    path = tmp_path / "v.bin"
    save_vector(vec, path)
    np.testing.assert_array_equal(load_vector(path), vec)


# ---------------------------------------------------------------------------
# Synthetic generators.
# ---------------------------------------------------------------------------

def test_synth_lasso_support_count():
    _, _, alpha_true = synth_lasso(n=10, d=5, support_frac=0.2, noise_sd=0.0, seed=7)
    assert np.count_nonzero(alpha_true) == 2


def test_synth_lasso_deterministic():
    a = synth_lasso(n=12, d=6, support_frac=0.5, noise_sd=0.3, seed=11)
    b = synth_lasso(n=12, d=6, support_frac=0.5, noise_sd=0.3, seed=11)
    np.testing.assert_array_equal(a[0].values, b[0].values)
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])


def test_synth_lasso_zero_noise_exact():
    m, targets, alpha_true = synth_lasso(n=15, d=8, support_frac=0.3,
                                         noise_sd=0.0, seed=3)
    resid = m.values.astype(np.float64) @ alpha_true - targets
    assert np.linalg.norm(resid) == 0.0


def test_synth_lasso_validation():
    with pytest.raises(ValueError):
        synth_lasso(n=10, d=5, support_frac=0.0, noise_sd=0.1, seed=1)
    with pytest.raises(ValueError):
        synth_lasso(n=10, d=5, support_frac=0.5, noise_sd=-1.0, seed=1)


def test_synth_svm_labels():
    m, labels = synth_svm(n=40, d=10, seed=5)
    assert set(np.unique(labels)) <= {-1.0, 1.0}
    assert m.n == 40 and m.d == 10
    np.testing.assert_allclose(column_sq_norms(m.values), 1.0, rtol=1e-5)


def test_state_and_gap_memory():
    state = ModelState.zeros(4, 6, np.float32)
    assert state.alpha.shape == (6,) and state.v.shape == (4,) and state.epoch == 0
    z = GapMemory.zeros(6)
    z.record_writes(5)
    z.record_writes(2)
    assert z.updates_this_epoch == 7 and z.total_updates == 7
    z.begin_epoch()
    assert z.updates_this_epoch == 0 and z.total_updates == 7
