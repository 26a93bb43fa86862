"""Image and latent-tensor codec built on Tucker decomposition.

Encoding: tensorize, decompose with HOOI at the configuration's ranks,
quantize the factor matrices at ``b_u`` bits, chunk-quantize the core with a
corpus-fitted boundary model, then range code the core. A
:class:`CodecInstance` holds the fitted models for every rate configuration,
so one instance serves many operating points.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .bitstream import (
    CompressedPayload,
    RateConfig,
    decode_factor_matrix,
    deserialize,
    encode_core,
    encode_factor_matrix,
    max_payload_bits,
)
from .quantizer import QuantizerModel, assign_chunks, dequantize_core, dyadic_model, fit_lloyd, quantize_core
from .tensor import as_tensor3, multi_mode_product_except
from .tensorize import (
    STRATEGIES,
    TensorizationDescriptor,
    as_image,
    detensorize,
    effective_ranks,
    tensorize,
)
from .tucker import HooiSettings, hooi

__all__ = [
    "TRAINING_CONFIGS",
    "EVALUATION_CONFIGS",
    "BOUNDARY_METHODS",
    "FittedConfig",
    "CodecInstance",
    "CodecError",
    "ModelMismatchError",
    "fit_quantizers",
    "compress",
    "compress_tensor",
    "decompress",
    "rate_control",
    "latent_descriptor",
]

log = logging.getLogger(__name__)

#: rank/interval groups used to fit the boundary models
TRAINING_CONFIGS = (
    RateConfig((38, 37, 28), 5, 16, 0),
    RateConfig((36, 35, 26), 4, 16, 1),
    RateConfig((34, 31, 23), 3, 16, 2),
    RateConfig((34, 30, 22), 3, 16, 3),
)
#: operating points for evaluation; two of them are never fitted directly
EVALUATION_CONFIGS = (
    RateConfig((38, 37, 28), 5),
    RateConfig((36, 35, 26), 4),
    RateConfig((35, 32, 23), 4),
    RateConfig((34, 31, 23), 3),
    RateConfig((34, 30, 22), 3),
    RateConfig((34, 30, 22), 2),
)
BOUNDARY_METHODS = ("lloyd", "dyadic")
INSTANCE_FORMAT = "tdnc-instance/1"
SKETCH_SIZE = 4096
#: latent files carry no pixel grid; each latent cell stands for 8 x 8 pixels
LATENT_PIXELS_PER_CELL = 64
#: pools thinner than this many samples per interval trigger a warning
MIN_SAMPLES_PER_INTERVAL = 1000


class CodecError(ValueError):
    pass


class ModelMismatchError(CodecError):
    """The stream was produced with a quantizer model this instance lacks."""


@dataclass
class FittedConfig:
    config: RateConfig
    model: QuantizerModel
    samples: int
    #: quantiles of the pooled magnitudes, used to derive models for unseen configs
    sketch: np.ndarray
    derived_from: Optional[int] = None

    def to_json(self) -> dict:
        c = self.config
        return {
            "id": c.config_id,
            "ranks": list(c.ranks),
            "intervals": c.intervals,
            "factor_bits": c.factor_bits,
            "samples": self.samples,
            "derived_from": self.derived_from,
            "model": {
                "boundaries": self.model.boundaries.tolist(),
                "representatives": self.model.representatives.tolist(),
                "mse": None if math.isnan(self.model.mse) else self.model.mse,
                "iterations": self.model.iterations,
                "converged": self.model.converged,
            },
            "sketch": self.sketch.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FittedConfig":
        m = d["model"]
        model = QuantizerModel(
            np.array(m["boundaries"], dtype=np.float64),
            np.array(m["representatives"], dtype=np.float64),
            float("nan") if m.get("mse") is None else float(m["mse"]),
            int(m.get("iterations", 0)),
            bool(m.get("converged", True)),
        )
        config = RateConfig(tuple(d["ranks"]), int(d["intervals"]), int(d["factor_bits"]), int(d["id"]))
        if model.intervals != config.intervals:
            raise CodecError(f"config {config.config_id}: model has {model.intervals} intervals")
        return cls(config, model, int(d["samples"]), np.array(d["sketch"], dtype=np.float64),
                   d.get("derived_from"))


@dataclass
class CodecInstance:
    """Rate configurations with their fitted boundary models."""

    strategy: str = "patch-stack"
    patch_size: int = 16
    boundary_method: str = "lloyd"
    seed: int = 0
    configs: Dict[int, FittedConfig] = field(default_factory=dict)
    hooi_settings: HooiSettings = field(default_factory=HooiSettings)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise CodecError(f"unknown strategy {self.strategy!r}")
        if self.boundary_method not in BOUNDARY_METHODS:
            raise CodecError(f"unknown boundary method {self.boundary_method!r}")

    def __len__(self):
        return len(self.configs)

    def ids(self) -> List[int]:
        """Config ids ordered by (sum of ranks, intervals), smallest first."""
        return sorted(self.configs, key=lambda i: (self.configs[i].config.sort_key, i))

    def get(self, config_id: int) -> FittedConfig:
        try:
            return self.configs[int(config_id)]
        except KeyError:
            raise CodecError(f"config id {config_id} not in this codec instance "
                             f"(available: {sorted(self.configs)})") from None

    def find(self, ranks, intervals, factor_bits=16) -> Optional[int]:
        key = (tuple(int(r) for r in ranks), int(intervals), int(factor_bits))
        for i, fc in self.configs.items():
            c = fc.config
            if (c.ranks, c.intervals, c.factor_bits) == key:
                return i
        return None

    def ensure_config(self, ranks, intervals, factor_bits: int = 16) -> int:
        """Return the id of a matching config, deriving one if it was never fitted.

        A derived config borrows the boundary model of the fitted config
        with the same ``M`` whose ranks are nearest in L1 distance. When no
        fitted config has that ``M``, the nearest one's stored magnitude
        sketch is refitted with ``M`` intervals.
        """
        existing = self.find(ranks, intervals, factor_bits)
        if existing is not None:
            return existing
        fitted = [fc for fc in self.configs.values() if fc.derived_from is None]
        if not fitted:
            raise CodecError("codec instance has no fitted configs to derive from")
        ranks = tuple(int(r) for r in ranks)

        def distance(fc):
            return (fc.config.intervals != intervals,
                    sum(abs(a - b) for a, b in zip(fc.config.ranks, ranks)),
                    abs(fc.config.intervals - intervals), fc.config.config_id)

        src = min(fitted, key=distance)
        new_id = max(self.configs) + 1
        config = RateConfig(ranks, intervals, factor_bits, new_id)
        if src.config.intervals == config.intervals:
            model = src.model
        else:
            model = _fit_model(src.sketch, config.intervals, self.boundary_method)
        self.configs[new_id] = FittedConfig(config, model, src.samples, src.sketch, src.config.config_id)
        return new_id

    def to_json(self) -> str:
        doc = {
            "format": INSTANCE_FORMAT,
            "strategy": self.strategy,
            "patch_size": self.patch_size,
            "boundary_method": self.boundary_method,
            "seed": self.seed,
            "hooi": {
                "max_iterations": self.hooi_settings.max_iterations,
                "relative_tolerance": self.hooi_settings.relative_tolerance,
            },
            "configs": [self.configs[i].to_json() for i in sorted(self.configs)],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CodecInstance":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CodecError(f"codec instance is not valid JSON: {exc}") from None
        if doc.get("format") != INSTANCE_FORMAT:
            raise CodecError(f"unsupported codec instance format {doc.get('format')!r}")
        h = doc.get("hooi", {})
        inst = cls(
            doc["strategy"], int(doc["patch_size"]), doc["boundary_method"], int(doc["seed"]),
            hooi_settings=HooiSettings(int(h.get("max_iterations", 50)),
                                       float(h.get("relative_tolerance", 1e-6))),
        )
        for d in doc["configs"]:
            fc = FittedConfig.from_json(d)
            if fc.config.config_id in inst.configs:
                raise CodecError(f"duplicate config id {fc.config.config_id}")
            inst.configs[fc.config.config_id] = fc
        return inst

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "CodecInstance":
        return cls.from_json(Path(path).read_text())


def _fit_model(samples: np.ndarray, intervals: int, method: str) -> QuantizerModel:
    if method == "dyadic":
        return dyadic_model(samples, intervals)
    return fit_lloyd(samples, intervals)


def _sketch(sorted_samples: np.ndarray) -> np.ndarray:
    # evenly spaced order statistics; keeping the extremes preserves the
    # heavy tail that dominates the quantizer error
    if sorted_samples.size <= SKETCH_SIZE:
        return sorted_samples.copy()
    idx = np.round(np.linspace(0, sorted_samples.size - 1, SKETCH_SIZE)).astype(np.intp)
    return sorted_samples[idx]


def latent_descriptor(dims: Sequence[int], pixel_count: Optional[int] = None) -> TensorizationDescriptor:
    """Descriptor for a raw latent; width and height only fix the pixel count."""
    i1, i2, _ = (int(d) for d in dims)
    if pixel_count is None:
        return TensorizationDescriptor("latent", 0, 8 * i2, 8 * i1, 0)
    return TensorizationDescriptor("latent", 0, 1, int(pixel_count), 0)


def _decompose(t: np.ndarray, config: RateConfig, inst: CodecInstance):
    ranks = effective_ranks(config.ranks, t.shape, inst.strategy, inst.patch_size)
    return hooi(t, ranks, inst.hooi_settings)


def fit_quantizers(
    corpus: Iterable,
    configs: Sequence[RateConfig],
    strategy: str = "patch-stack",
    patch_size: int = 16,
    boundary_method: str = "lloyd",
    max_samples: int = 200_000,
    seed: int = 0,
    hooi_settings: HooiSettings = HooiSettings(),
) -> CodecInstance:
    """Fit one boundary model per config from core magnitudes pooled over a corpus.

    ``corpus`` holds 8-bit images, or float tensors for the latent strategy.
    When a pool exceeds ``max_samples`` it is subsampled without replacement
    by ``numpy.random.default_rng(seed + config_id)``, so fitting is
    deterministic for a given corpus order.
    """
    inst = CodecInstance(strategy, patch_size, boundary_method, seed, hooi_settings=hooi_settings)
    tensors = []
    for item in corpus:
        if strategy == "latent":
            tensors.append(as_tensor3(item))
        else:
            tensors.append(tensorize(item, strategy, patch_size)[0])
    if not tensors:
        raise CodecError("training corpus is empty")
    ids = [c.config_id for c in configs]
    if len(set(ids)) != len(ids):
        raise CodecError("config ids must be unique")
    for config in configs:
        pools = [np.abs(_decompose(t, config, inst).core).ravel() for t in tensors]
        pool = np.concatenate(pools)
        if pool.size > max_samples:
            rng = np.random.default_rng(seed + config.config_id)
            pool = pool[rng.choice(pool.size, size=max_samples, replace=False)]
        pool = np.sort(pool)
        distinct = np.unique(pool).size
        if distinct < config.intervals:
            raise CodecError(f"config {config.config_id}: corpus yields {distinct} distinct "
                             f"magnitudes, fewer than M = {config.intervals}")
        if pool.size < MIN_SAMPLES_PER_INTERVAL * config.intervals:
            warnings.warn(f"config {config.config_id}: only {pool.size} magnitude samples "
                          f"for {config.intervals} intervals", RuntimeWarning, stacklevel=2)
        model = _fit_model(pool, config.intervals, boundary_method)
        inst.configs[config.config_id] = FittedConfig(config, model, int(pool.size), _sketch(pool))
        log.info("config %d: %d samples, mse %.3g", config.config_id, pool.size, model.mse)
    return inst


def _encode_tensor(t: np.ndarray, desc: TensorizationDescriptor, inst: CodecInstance,
                   config_id: int, embed_model: bool) -> CompressedPayload:
    fc = inst.get(config_id)
    config, model = fc.config, fc.model
    f = _decompose(t, config, inst)
    blocks = tuple(None if u.shape[0] == u.shape[1] else encode_factor_matrix(u, config.factor_bits)
                   for u in f.factors)
    side = assign_chunks(f.core, model).to_float32()
    q = quantize_core(f.core, model, side)
    core, raw = encode_core(q)
    return CompressedPayload(
        descriptor=desc,
        dims=tuple(int(d) for d in t.shape),
        ranks=f.ranks,
        intervals=config.intervals,
        factor_bits=config.factor_bits,
        config_id=config.config_id,
        model_fingerprint=model.fingerprint(),
        factors=blocks,
        present=side.present,
        cmin=side.cmin,
        cmax=side.cmax,
        core_count=int(q.chunks.size),
        core_data=core,
        raw_core=raw,
        model=model if embed_model else None,
    )


def compress(img, inst: CodecInstance, config_id: int, embed_model: bool = False) -> CompressedPayload:
    """Compress an 8-bit image with one of the instance's rate configs."""
    if inst.strategy == "latent":
        raise CodecError("this instance codes latent tensors; use compress_tensor")
    img = as_image(img)
    if inst.strategy == "patch-stack" and min(img.shape[:2]) < 2 and inst.patch_size > 1:
        raise CodecError(f"image {img.shape[1]}x{img.shape[0]} too small for reflect padding")
    t, desc = tensorize(img, inst.strategy, inst.patch_size)
    return _encode_tensor(t, desc, inst, config_id, embed_model)


def compress_tensor(t, inst: CodecInstance, config_id: int, pixel_count: Optional[int] = None,
                    embed_model: bool = False) -> CompressedPayload:
    """Compress a raw 3-order tensor (latent mode).

    ``pixel_count`` sets the bpp denominator recorded in the header; by
    default each cell of the first two modes counts as 8 x 8 pixels.
    """
    if inst.strategy != "latent":
        raise CodecError(f"this instance codes images ({inst.strategy}); use compress")
    t = as_tensor3(t)
    return _encode_tensor(t, latent_descriptor(t.shape, pixel_count), inst, config_id, embed_model)


def _resolve_model(p: CompressedPayload, inst: Optional[CodecInstance]) -> QuantizerModel:
    if p.model is not None:
        return p.model
    if inst is None:
        raise ModelMismatchError("stream references a quantizer model but no codec instance was given")
    if p.config_id is None or p.config_id not in inst.configs:
        raise ModelMismatchError(f"stream needs quantizer model for config id {p.config_id}, "
                                 f"which this codec instance does not have")
    model = inst.configs[p.config_id].model
    if model.fingerprint() != p.model_fingerprint:
        raise ModelMismatchError(
            f"config id {p.config_id}: stream model fingerprint {p.model_fingerprint:08x} "
            f"does not match this instance ({model.fingerprint():08x})"
        )
    if model.intervals != p.intervals:
        raise ModelMismatchError(f"config id {p.config_id}: interval count differs")
    return model


def decode_tensor(p: Union[CompressedPayload, bytes], inst: Optional[CodecInstance] = None) -> np.ndarray:
    """Reconstructed tensor of a stream, before detensorization."""
    if not isinstance(p, CompressedPayload):
        p = deserialize(p)
    _resolve_model(p, inst)
    try:
        q = p.quantized_core()
        core = dequantize_core(q)
    except ValueError as exc:
        raise CodecError(f"corrupt core block: {exc}") from exc
    factors = [decode_factor_matrix(b, d) for b, d in zip(p.factors, p.dims)]
    return multi_mode_product_except(core, factors)


def decompress(p: Union[CompressedPayload, bytes], inst: Optional[CodecInstance] = None) -> np.ndarray:
    """Decode to an ``(H, W, C)`` uint8 image, or to a float tensor for latent streams."""
    if not isinstance(p, CompressedPayload):
        p = deserialize(p)
    t = decode_tensor(p, inst)
    if p.descriptor.strategy == "latent":
        return t
    return detensorize(t, p.descriptor)


def _image_dims(img_dims: Sequence[int], inst: CodecInstance) -> Tuple[Tuple[int, int, int], int]:
    if inst.strategy == "latent":
        dims = tuple(int(d) for d in img_dims)
        return dims, LATENT_PIXELS_PER_CELL * dims[0] * dims[1]
    h, w = int(img_dims[0]), int(img_dims[1])
    c = int(img_dims[2]) if len(img_dims) > 2 else 1
    b = inst.patch_size
    desc = TensorizationDescriptor(inst.strategy, b, h, w, c,
                                   (-h) % b if inst.strategy == "patch-stack" else 0,
                                   (-w) % b if inst.strategy == "patch-stack" else 0)
    return desc.tensor_dims(), h * w


def bpp_bound(config: RateConfig, inst: CodecInstance, img_dims: Sequence[int]) -> float:
    """Worst-case bpp of ``config`` for an image (H, W[, C]) or latent dims."""
    dims, pixels = _image_dims(img_dims, inst)
    ranks = effective_ranks(config.ranks, dims, inst.strategy, inst.patch_size)
    return max_payload_bits(dims, ranks, config.intervals, config.factor_bits) / pixels


def rate_control(target_bpp: float, inst: CodecInstance, img_dims: Sequence[int]):
    """Pick the config with the largest bpp bound not above ``target_bpp``.

    Returns ``(config_id, bound_bpp, overshoot)``. When nothing fits, the
    config with the smallest bound is returned and ``overshoot`` is True.
    """
    if not inst.configs:
        raise CodecError("codec instance has no configs")
    scored = sorted(
        (bpp_bound(fc.config, inst, img_dims), fc.config.sort_key, i)
        for i, fc in inst.configs.items()
    )
    fitting = [s for s in scored if s[0] <= target_bpp]
    if fitting:
        bound, _, cid = fitting[-1]
        return cid, bound, False
    bound, _, cid = scored[0]
    return cid, bound, True
