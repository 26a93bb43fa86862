import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dp_quantizer_mse
from tdcodec.quantizer import (
    ChunkAssignment,
    QuantizerModel,
    assign_chunks,
    dequantize_core,
    dyadic_model,
    fit_lloyd,
    quantize_core,
)


def _fixed_assignment(chunks, cmin, cmax):
    chunks = np.asarray(chunks, dtype=np.uint8)
    present = np.zeros(len(cmin), dtype=bool)
    present[np.unique(chunks) - 1] = True
    return ChunkAssignment(chunks, np.asarray(cmin, float), np.asarray(cmax, float), present)


def _model(boundaries):
    b = np.asarray(boundaries, dtype=float)
    finite = np.where(np.isinf(b), b[np.isfinite(b)].max() * 2, b)
    return QuantizerModel(finite, 0.5 * (finite[:-1] + finite[1:]))


def test_uniform_analytic_optimum():
    x = np.linspace(0.0, 1.0, 200_001)
    m = fit_lloyd(x, 4)
    np.testing.assert_allclose(m.boundaries, [0, 0.25, 0.5, 0.75, 1.0], atol=1e-3)
    np.testing.assert_allclose(m.representatives, [0.125, 0.375, 0.625, 0.875], atol=1e-3)


def test_two_point_distribution():
    x = np.array([1.0] * 50 + [3.0] * 50)
    m = fit_lloyd(x, 2)
    np.testing.assert_allclose(m.representatives, [1.0, 3.0])
    assert m.boundaries[1] == pytest.approx(2.0)
    assert m.mse == 0.0


def test_half_normal_against_dp_oracle():
    x = np.abs(np.random.default_rng(7).standard_normal(100_000))
    model = fit_lloyd(x, 8)
    counts, edges = np.histogram(x, bins=1024)
    centres = 0.5 * (edges[:-1] + edges[1:])
    oracle = dp_quantizer_mse(centres, counts, 8)
    assert model.mse <= 1.02 * oracle


def test_fixed_point_conditions():
    x = np.abs(np.random.default_rng(3).standard_normal(20_000))
    m = fit_lloyd(x, 5)
    assert m.converged
    np.testing.assert_allclose(m.boundaries[1:-1],
                               0.5 * (m.representatives[:-1] + m.representatives[1:]), atol=1e-9)
    cells = m.cell_index(x)
    for q in range(5):
        assert abs(x[cells == q].mean() - m.representatives[q]) <= 1e-9
    assert m.boundaries[-1] == x.max()


def test_mse_history_non_increasing():
    x = np.random.default_rng(4).exponential(size=30_000)
    h = np.array(fit_lloyd(x, 6).history)
    assert h.size >= 2
    assert np.all(np.diff(h) <= 1e-12)


def test_single_interval_is_mean():
    x = np.random.default_rng(5).random(1000)
    m = fit_lloyd(x, 1)
    assert m.representatives[0] == pytest.approx(x.mean())


@pytest.mark.parametrize("bad, m", [([], 2), ([1.0, 1.0, 1.0], 2), ([-1.0, 2.0], 1),
                                    ([np.nan, 1.0], 1), ([1.0, 2.0], 0), ([1.0, 2.0], 17)])
def test_fit_errors(bad, m):
    with pytest.raises(ValueError):
        fit_lloyd(np.array(bad), m)


def test_model_validation():
    with pytest.raises(ValueError):
        QuantizerModel(np.array([0.0, 2.0, 1.0]), np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        QuantizerModel(np.array([0.1, 1.0]), np.array([0.5]))
    with pytest.raises(ValueError):
        QuantizerModel(np.array([0.0, 1.0]), np.array([0.2, 0.5]))


def test_fingerprint_tracks_values():
    a = _model([0, 1, 2])
    b = _model([0, 1, 2.5])
    assert a.fingerprint() == _model([0, 1, 2]).fingerprint()
    assert a.fingerprint() != b.fingerprint()


def test_assign_chunks_interval_membership():
    model = _model([0, 1, 2, np.inf])
    a = assign_chunks(np.array([0.5, -1.5, 9.0]), model)
    assert a.chunks.tolist() == [1, 2, 3]
    np.testing.assert_array_equal(a.cmin, [0.5, 1.5, 9.0])
    np.testing.assert_array_equal(a.cmax, [0.5, 1.5, 9.0])


def test_assign_chunks_boundary_goes_up_and_last_is_closed():
    model = _model([0, 1, 2])
    a = assign_chunks(np.array([1.0, 2.0, 5.0, 0.0]), model)
    assert a.chunks.tolist() == [2, 2, 2, 1]


def test_assign_chunks_constant_and_counts(rng):
    model = _model([0, 1, 2, 3])
    a = assign_chunks(np.full((2, 3, 4), 1.5), model)
    assert a.present.tolist() == [False, True, False]
    assert a.cmin[1] == a.cmax[1] == 1.5
    assert a.cmin[0] == a.cmax[0] == 0.0
    core = rng.standard_normal((5, 6, 7)) * 2
    assert assign_chunks(core, model).counts().sum() == core.size


def test_quantize_example():
    a = _fixed_assignment([3, 3], [0, 0, 0], [0, 0, 7])
    model = _model([0, 1, 2, 8])
    q = quantize_core(np.array([3.5, -3.5]).reshape(1, 1, 2), model, a)
    assert q.codes.tolist() == [4, 4]
    assert q.signs.tolist() == [0, 1]
    np.testing.assert_allclose(dequantize_core(q).ravel(), [3.5, -3.5])
    assert q.payload_bits() == 8


def test_degenerate_chunk_codes_zero_and_decodes_cmin():
    model = _model([0, 1, 2, 3])
    q = quantize_core(np.full((2, 2, 2), -1.25), model)
    assert not q.codes.any()
    assert np.all(q.signs == 1)
    np.testing.assert_array_equal(dequantize_core(q), np.full((2, 2, 2), -1.25))


def test_clamp_at_cmax():
    model = _model([0, 10, 20])
    q = quantize_core(np.array([1.0, 9.0]).reshape(2, 1, 1), model)
    assert q.codes.tolist() == [0, 1]  # round(2 / 8 * 8) = 2 is clamped to 1


def test_zero_sign_is_zero():
    model = _model([0, 1, 2])
    q = quantize_core(np.array([0.0, -0.0, 1.5]).reshape(3, 1, 1), model)
    assert q.signs.tolist() == [0, 0, 0]


def test_corrupt_chunk_index_rejected():
    model = _model([0, 1, 2])
    q = quantize_core(np.array([0.5, 1.5]).reshape(2, 1, 1), model)
    bad = q.__class__(q.dims, q.signs, np.array([1, 3], np.uint8), q.codes, q.cmin, q.cmax, q.present)
    with pytest.raises(ValueError):
        dequantize_core(bad)


def test_assignment_interval_mismatch():
    a = assign_chunks(np.ones(3), _model([0, 1, 2]))
    with pytest.raises(ValueError):
        quantize_core(np.ones(3), _model([0, 1, 2, 3]), a)


core_arrays = arrays(np.float64, (3, 4, 5), elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(core_arrays, st.integers(1, 8))
def test_error_bound_sign_and_idempotence(core, m):
    mags = np.abs(core).ravel()
    if np.unique(mags).size < m:
        return
    model = fit_lloyd(mags, m)
    # float32 side info, as stored in streams, keeps every step a normal float64
    q = quantize_core(core, model, assign_chunks(core, model).to_float32())
    rec = dequantize_core(q)
    idx = q.chunks.astype(int) - 1
    step = ((q.cmax - q.cmin) / np.exp2(np.arange(1, m + 1)))[idx]
    err = np.abs(np.abs(rec.ravel()) - mags)
    assert np.all(err <= step * (1 + 1e-12) + 1e-12)
    # the sign bit survives even when the magnitude rounds to zero
    assert np.array_equal(np.signbit(rec.ravel()), core.ravel() < 0)
    assert np.all(q.codes < (1 << q.chunks.astype(np.uint32)))
    again = quantize_core(rec, model, q.side)
    np.testing.assert_array_equal(again.codes, q.codes)
    # a decoded exact zero is re-encoded with the canonical sign 0
    live = rec.ravel() != 0
    np.testing.assert_array_equal(again.signs[live], q.signs[live])


def test_float32_side_info_keeps_members_inside(rng):
    core = rng.standard_normal((6, 6, 6)) * 123.456
    model = fit_lloyd(np.abs(core).ravel(), 4)
    a = assign_chunks(core, model)
    f = a.to_float32()
    assert np.all(f.cmin.astype(np.float32) == f.cmin)
    assert np.all(f.cmin <= a.cmin) and np.all(f.cmax >= a.cmax)


def test_dyadic_model():
    m = dyadic_model(np.array([0.1, 3.0, 8.0]), 3)
    np.testing.assert_array_equal(m.boundaries, [0, 2, 4, 8])
    np.testing.assert_array_equal(m.representatives, [1, 3, 6])
    for bad, k in (([], 2), ([0.0, 0.0], 2), ([-1.0, 1.0], 2), ([1.0], 0)):
        with pytest.raises(ValueError):
            dyadic_model(np.array(bad), k)


def test_subnormal_chunk_width():
    core = np.array([0.0, 5e-324, 1.0]).reshape(3, 1, 1)
    q = quantize_core(core, _model([0, 0.5, 2]))
    assert q.codes.tolist() == [0, 1, 0]
    assert np.all(np.isfinite(dequantize_core(q)))
