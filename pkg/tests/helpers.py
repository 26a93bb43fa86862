"""Small builders shared by the codec-level tests."""
import warnings

import numpy as np

from tdcodec.bitstream import RateConfig
from tdcodec.codec import fit_quantizers


def latent_tensors(n, dims, seed=0):
    """Gaussian tensors with a decaying mode-wise spectrum, like smooth latents."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.standard_normal(dims)
        for axis, d in enumerate(dims):
            shape = [1, 1, 1]
            shape[axis] = d
            x = x * np.exp(-np.arange(d) / (0.3 * d)).reshape(shape)
        out.append(x * 40.0)
    return out


def latent_instance(dims=(12, 12, 8), configs=(RateConfig((6, 5, 4), 4, 16, 0),), n=4, seed=0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # small pools are fine here
        return fit_quantizers(latent_tensors(n, dims, seed), configs, strategy="latent", **kw)
