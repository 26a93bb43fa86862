import numpy as np
import pytest
import skimage.data as data

from helpers import latent_instance, latent_tensors
from tdcodec.bitstream import CompressedPayload, RateConfig, encode_core
from tdcodec.codec import (
    EVALUATION_CONFIGS,
    TRAINING_CONFIGS,
    CodecError,
    CodecInstance,
    ModelMismatchError,
    bpp_bound,
    compress,
    compress_tensor,
    decompress,
    fit_quantizers,
    rate_control,
)
from tdcodec.metrics import psnr
from tdcodec.quantizer import QuantizedCore, fit_lloyd
from tdcodec.tucker import hooi


def _crops():
    return [data.camera()[100:196, 150:246], data.astronaut()[:96, 200:296],
            data.coins()[:80, :96], data.rocket()[100:196, 100:196]]


@pytest.fixture(scope="module")
def image_inst():
    inst = fit_quantizers(_crops()[2:], TRAINING_CONFIGS)
    for c in EVALUATION_CONFIGS:
        inst.ensure_config(c.ranks, c.intervals, c.factor_bits)
    return inst


def _eval_ids(inst):
    return [inst.find(c.ranks, c.intervals, c.factor_bits) for c in EVALUATION_CONFIGS]


def test_constant_image_near_exact(image_inst):
    img = np.full((48, 64, 3), (200, 40, 90), np.uint8)
    for cid in _eval_ids(image_inst):
        assert psnr(img, decompress(compress(img, image_inst, cid), image_inst)) >= 50


def test_round_trip_shape_and_quality(image_inst):
    img = _crops()[0]
    p = compress(img, image_inst, 0)
    out = decompress(p.to_bytes(), image_inst)
    assert out.shape == img.shape + (1,) and out.dtype == np.uint8
    assert 0 < psnr(img, out) < np.inf


def test_bpp_monotone_over_evaluation_configs(image_inst):
    ids = sorted(_eval_ids(image_inst), key=lambda i: image_inst.get(i).config.sort_key)
    for img in _crops()[:2]:
        sizes = [compress(img, image_inst, i).total_bits for i in ids]
        assert all(a <= b for a, b in zip(sizes, sizes[1:])), sizes


def test_deterministic(image_inst):
    img = _crops()[1]
    a = compress(img, image_inst, 1).to_bytes()
    assert a == compress(img.copy(), image_inst, 1).to_bytes()
    np.testing.assert_array_equal(decompress(a, image_inst), decompress(a, image_inst))


def test_zero_core_gives_black_image(image_inst):
    p = compress(_crops()[0], image_inst, 2)
    n, m = p.core_count, p.intervals
    present = np.zeros(m, bool)
    present[0] = True
    q = QuantizedCore(p.ranks, np.zeros(n, np.uint8), np.ones(n, np.uint8), np.zeros(n, np.uint32),
                      np.zeros(m), np.zeros(m), present)
    core, raw = encode_core(q)
    zero = CompressedPayload(p.descriptor, p.dims, p.ranks, p.intervals, p.factor_bits, p.config_id,
                             p.model_fingerprint, p.factors, present, np.zeros(m), np.zeros(m),
                             n, core, raw)
    assert not decompress(zero.to_bytes(), image_inst).any()


def test_wrong_model_rejected(image_inst):
    blob = compress(_crops()[0], image_inst, 0).to_bytes()
    other = fit_quantizers(_crops()[:1], TRAINING_CONFIGS[:1])
    with pytest.raises(ModelMismatchError):
        decompress(blob, other)
    with pytest.raises(ModelMismatchError):
        decompress(blob, CodecInstance())
    with pytest.raises(ModelMismatchError):
        decompress(blob)


def test_compress_errors(image_inst):
    with pytest.raises(CodecError):
        compress(np.zeros((1, 40), np.uint8), image_inst, 0)
    with pytest.raises(CodecError):
        compress(_crops()[0], image_inst, 999)
    with pytest.raises(CodecError):
        compress_tensor(np.zeros((4, 4, 4)), image_inst, 0)


def test_rate_control_examples(image_inst):
    dims = (96, 96)
    bounds = {i: bpp_bound(image_inst.get(i).config, image_inst, dims) for i in image_inst.ids()}
    hi = max(bounds, key=bounds.get)
    lo = min(bounds, key=bounds.get)
    assert rate_control(1e9, image_inst, dims) == (hi, bounds[hi], False)
    assert rate_control(0.0, image_inst, dims) == (lo, bounds[lo], True)
    last = -1.0
    for target in np.linspace(0, 1.2 * max(bounds.values()), 200):
        cid, bound, over = rate_control(target, image_inst, dims)
        assert bound >= last
        assert over or bound <= target
        last = bound


def test_bound_covers_real_stream(image_inst):
    img = _crops()[1]
    for cid in image_inst.ids():
        p = compress(img, image_inst, cid)
        bound = bpp_bound(image_inst.get(cid).config, image_inst, img.shape)
        assert p.total_bits / (img.shape[0] * img.shape[1]) <= bound


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_single_image_single_interval_is_mean():
    img = _crops()[0]
    config = RateConfig((38, 37, 28), 1, 16, 0)
    inst = fit_quantizers([img], [config])
    m = inst.get(0).model
    from tdcodec.tensorize import effective_ranks, tensorize
    t = tensorize(img)[0]
    core = hooi(t, effective_ranks(config.ranks, t.shape, "patch-stack")).core
    assert m.representatives[0] == pytest.approx(np.abs(core).mean(), rel=1e-12)
    assert m.intervals == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_deterministic():
    a = fit_quantizers(_crops()[2:], TRAINING_CONFIGS[:2], max_samples=500, seed=3)
    b = fit_quantizers(_crops()[2:], TRAINING_CONFIGS[:2], max_samples=500, seed=3)
    assert a.to_json() == b.to_json()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_matches_direct_lloyd_on_latent_corpus():
    dims, config = (12, 12, 8), RateConfig((6, 5, 4), 3, 16, 0)
    corpus = latent_tensors(5, dims, seed=21)
    inst = fit_quantizers(corpus, [config], strategy="latent")
    pool = np.concatenate([np.abs(hooi(t, config.ranks).core).ravel() for t in corpus])
    direct = fit_lloyd(pool, 3)
    np.testing.assert_array_equal(inst.get(0).model.boundaries, direct.boundaries)
    np.testing.assert_array_equal(inst.get(0).model.representatives, direct.representatives)


def test_fit_errors():
    with pytest.raises(CodecError):
        fit_quantizers([], TRAINING_CONFIGS)
    with pytest.raises(CodecError):
        # a 1x1x1 core offers a single magnitude for five intervals
        fit_quantizers([np.ones((2, 2, 2))], [RateConfig((1, 1, 1), 5)], strategy="latent")
    with pytest.raises(CodecError):
        fit_quantizers(_crops()[:1], [TRAINING_CONFIGS[0], TRAINING_CONFIGS[0]])


def test_instance_json_round_trip(image_inst, tmp_path):
    path = tmp_path / "inst.json"
    image_inst.save(path)
    back = CodecInstance.load(path)
    assert back.to_json() == image_inst.to_json()
    img = _crops()[0]
    blob = compress(img, image_inst, 3).to_bytes()
    assert compress(img, back, 3).to_bytes() == blob
    np.testing.assert_array_equal(decompress(blob, back), decompress(blob, image_inst))
    with pytest.raises(CodecError):
        CodecInstance.from_json("{}")
    with pytest.raises(CodecError):
        CodecInstance.from_json("not json")


def test_ensure_config_derivation(image_inst):
    ids = _eval_ids(image_inst)
    assert ids[0] == 0 and ids[1] == 1 and ids[3] == 2 and ids[4] == 3
    derived_same_m = image_inst.get(ids[2])
    assert derived_same_m.derived_from == 1
    assert derived_same_m.model is image_inst.get(1).model
    derived_new_m = image_inst.get(ids[5])
    assert derived_new_m.derived_from == 3 and derived_new_m.model.intervals == 2
    assert image_inst.ensure_config((34, 30, 22), 2) == ids[5]


def test_latent_round_trip_and_pixel_count():
    inst = latent_instance()
    t = latent_tensors(1, (12, 12, 8), seed=77)[0]
    p = compress_tensor(t, inst, 0)
    rec = decompress(p.to_bytes(), inst)
    assert rec.shape == t.shape
    assert np.linalg.norm(rec - t) < np.linalg.norm(t)
    assert p.descriptor.pixel_count == 64 * 12 * 12
    assert compress_tensor(t, inst, 0, pixel_count=1000).descriptor.pixel_count == 1000
    with pytest.raises(CodecError):
        compress(np.zeros((16, 16), np.uint8), inst, 0)


def test_thin_pool_warns():
    with pytest.warns(RuntimeWarning, match="magnitude samples"):
        fit_quantizers([data.camera()[:32, :32]], [RateConfig((38, 37, 28), 5)])
