"""Synthetic hyperspectral scenes mixed by the linear mixing model."""
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import GenerationError, ParameterError
from .hsi import AbundanceField, DatasetBundle, EndmemberSet, HsiCube
from .nn import sad

MIN_PAIRWISE_SAD = 0.1
MAX_RETRIES = 1000


@dataclass
class SynthConfig:
    height: int = 64
    width: int = 64
    p: int = 5
    bands: int = 162
    smoothness: float = 2.0
    snr_db: Optional[float] = 30.0  # None means noiseless
    purity_cap: float = 0.8
    block: int = 8
    concentration: float = 0.1
    seed: int = 0

    def validate(self):
        if self.p < 2:
            raise ParameterError("need at least two endmembers")
        if self.bands < 2 * self.p:
            raise ParameterError("need at least 2*p bands")
        if self.smoothness < 0:
            raise ParameterError("smoothness must be >= 0")
        if not 0 < self.purity_cap <= 1:
            raise ParameterError("purity cap must lie in (0, 1]")
        if self.purity_cap * self.p < 1:
            raise ParameterError("purity cap below 1/p cannot satisfy sum-to-one")
        if self.block < 1 or self.concentration <= 0:
            raise ParameterError("block must be >= 1 and concentration > 0")
        if self.height < 1 or self.width < 1:
            raise ParameterError("scene must contain at least one pixel")
        return self

    def to_dict(self):
        return asdict(self)


def wavelength_grid(L):
    """Band centers in micrometers spanning 0.4-2.5."""
    return np.linspace(0.4, 2.5, L)


def _random_spectrum(rng, t):
    base = rng.uniform(0.15, 0.55) + rng.uniform(-0.2, 0.2) * t + rng.uniform(-0.15, 0.15) * t * t
    spectrum = np.full_like(t, 0.0) + base
    for _ in range(rng.integers(3, 7)):
        center = rng.uniform(0.0, 1.0)
        width = rng.uniform(0.03, 0.15)
        amp = rng.uniform(-0.3, 0.35)
        spectrum += amp * np.exp(-0.5 * ((t - center) / width) ** 2)
    return np.clip(spectrum, 0.02, 1.0)


def gen_endmembers(p, L, seed):
    """``p`` smooth, distinct spectra on ``L`` bands with values in [0, 1].

    Each spectrum is a quadratic baseline plus 3-6 Gaussian bumps. Spectra
    are redrawn until every pair is at least 0.1 rad apart.
    """
    if p < 2 or L < 2 * p:
        raise ParameterError(f"need p >= 2 and L >= 2p, got p={p}, L={L}")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, L)
    spectra = []
    retries = 0
    while len(spectra) < p:
        cand = _random_spectrum(rng, t)
        if all(sad(cand, s) >= MIN_PAIRWISE_SAD for s in spectra):
            spectra.append(cand)
            continue
        retries += 1
        if retries > MAX_RETRIES:
            raise GenerationError(
                f"could not draw {p} spectra with pairwise SAD >= {MIN_PAIRWISE_SAD}")
    return EndmemberSet(np.array(spectra))


def cap_purity(fractions, cap):
    """Clip entries above ``cap`` and hand the excess to the other entries.

    The excess is shared in proportion to the uncapped entries (equally if
    they are all zero), repeated until no entry exceeds ``cap``.
    """
    x = np.array(fractions, dtype=float)
    if cap >= 1.0:
        return x
    flat = x.reshape(-1, x.shape[-1])
    for _ in range(flat.shape[1]):
        over = flat > cap
        if not over.any():
            break
        rows = over.any(axis=1)
        sub = flat[rows]
        sub_over = over[rows]
        excess = np.where(sub_over, sub - cap, 0.0).sum(axis=1, keepdims=True)
        sub = np.where(sub_over, cap, sub)
        free = ~sub_over & (sub < cap)
        weight = np.where(free, sub, 0.0)
        wsum = weight.sum(axis=1, keepdims=True)
        equal = free / np.maximum(free.sum(axis=1, keepdims=True), 1)
        share = np.where(wsum > 0, weight / np.where(wsum > 0, wsum, 1.0), equal)
        flat[rows] = sub + excess * share
    return flat.reshape(x.shape)


def gen_abundances(H, W, p, smoothness, purity_cap, seed, block=8, concentration=0.1):
    """Spatially smooth ANC/ASC abundance field.

    Dirichlet draws are made per ``block`` x ``block`` region (``block=1``
    gives one draw per pixel), each channel is Gaussian-blurred with std
    ``smoothness`` pixels, pixels are renormalized, and finally no entry is
    allowed to exceed ``purity_cap``.
    """
    rng = np.random.default_rng(seed)
    nr = -(-H // block)
    nc = -(-W // block)
    draws = rng.dirichlet(np.full(p, float(concentration)), size=(nr, nc))
    field = np.repeat(np.repeat(draws, block, axis=0), block, axis=1)[:H, :W]
    if smoothness > 0:
        field = np.stack([gaussian_filter(field[..., i], smoothness, mode="reflect")
                          for i in range(p)], axis=-1)
    field = np.maximum(field, 0.0)
    field /= field.sum(axis=-1, keepdims=True)
    field = cap_purity(field, purity_cap)
    field /= field.sum(axis=-1, keepdims=True)
    return AbundanceField(field)


def noise_sigma(signal, snr_db):
    """Per-sample noise std for mean signal power ``signal`` at ``snr_db``."""
    power = float(np.mean(np.asarray(signal) ** 2))
    return np.sqrt(power / 10 ** (snr_db / 10.0))


def mix_and_noise(endmembers, abundances, snr_db, seed):
    """Y = sum_i x_i a_i per pixel plus i.i.d. Gaussian noise at ``snr_db``.

    ``snr_db=None`` leaves the mixture noiseless.
    """
    A = endmembers.signatures
    X = abundances.fractions
    if X.shape[-1] != A.shape[0]:
        raise ParameterError("abundance and endmember counts differ")
    clean = X @ A
    if snr_db is None:
        return HsiCube(clean)
    rng = np.random.default_rng(seed)
    sigma = noise_sigma(clean, snr_db)
    return HsiCube(clean + rng.normal(0.0, sigma, size=clean.shape))


def measured_snr(clean, noisy):
    clean = np.asarray(clean)
    resid = np.asarray(noisy) - clean
    return 10 * np.log10(np.mean(clean ** 2) / np.mean(resid ** 2))


def make_scene(cfg=None, name="synthetic"):
    """Generate a full bundle (cube plus both ground truths) from ``cfg``.

    Cube and abundances are rounded to float32 so the bundle survives a
    save/load round trip unchanged.
    """
    cfg = (cfg or SynthConfig()).validate()
    ss = np.random.SeedSequence(cfg.seed)
    s_end, s_abu, s_noise = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    A = gen_endmembers(cfg.p, cfg.bands, s_end)
    A = EndmemberSet(A.signatures.astype(np.float32).astype(float))
    X = gen_abundances(cfg.height, cfg.width, cfg.p, cfg.smoothness, cfg.purity_cap, s_abu,
                       cfg.block, cfg.concentration)
    X = AbundanceField(X.fractions.astype(np.float32).astype(float))
    cube = mix_and_noise(A, X, cfg.snr_db, s_noise)
    cube = HsiCube(cube.reflectance.astype(np.float32).astype(float),
                   list(wavelength_grid(cfg.bands)))
    return DatasetBundle(name, cube, A, X)
