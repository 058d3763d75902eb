"""The two-stream spatial/spectral autoencoder with a shared linear decoder.

SAE: all pixels of a superpixel go through one dense layer (no bias),
batch-norm, dropout and ReLU; their l1-normalized codes are averaged into
the center-pixel abundance, which the decoder maps back to the center
spectrum.

SCAE: each pixel goes through four conv(ReLU)/max-pool stages and two dense
layers; a softmax (or, optionally, ReLU plus l1 normalization) yields its
abundance, decoded by the same decoder matrix.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from . import nn
from .errors import ArchitectureError, FormatError, NumericalError, ParameterError
from .hsi import read_f32, write_f32

log = logging.getLogger(__name__)

# (out_channels, kernel) per conv stage, each followed by ReLU and a 2-wide pool
CONV_STAGES = ((3, 5), (6, 4), (12, 5), (24, 4))
FC_HIDDEN = 100


@dataclass
class TrainConfig:
    lam: float = 5e-5
    mu: float = 5e-1
    lr_encoder: float = 1e-4
    lr_decoder: float = 1e-5
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    dropout: float = 0.1
    eps: float = nn.L1_EPS
    pixel_batch_size: int = 32  # SCAE pixels per step; 0 = all pixels of the batch
    encoder_init: str = "vca"    # "vca" or "he"
    scae_output: str = "softmax"  # "softmax" or "relu_l1"

    def validate(self):
        for name in ("lam", "mu", "lr_encoder", "lr_decoder", "eps"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be positive")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.pixel_batch_size < 0:
            raise ParameterError("pixel_batch_size must be >= 0")
        if self.scae_output not in ("softmax", "relu_l1"):
            raise ParameterError(f"unknown scae_output {self.scae_output!r}")
        if self.encoder_init not in ("vca", "he"):
            raise ParameterError(f"unknown encoder_init {self.encoder_init!r}")
        return self


# -- architecture arithmetic ------------------------------------------------------

def scae_stage_lengths(L):
    """Sequence lengths after each conv and pool, or None if L is too short."""
    lengths = []
    n = L
    for _, k in CONV_STAGES:
        n = n - k + 1
        if n < 2:
            return None
        lengths.append(n)
        n //= 2
        lengths.append(n)
    return lengths


def min_scae_bands():
    L = 1
    while scae_stage_lengths(L) is None:
        L += 1
    return L


def flatten_length(L):
    lengths = scae_stage_lengths(L)
    if lengths is None:
        raise ArchitectureError(
            f"SCAE needs at least {min_scae_bands()} bands, got {L}")
    return CONV_STAGES[-1][0] * lengths[-1]


# -- parameters ---------------------------------------------------------------------

class SharedDecoder:
    """The single (L, p) endmember matrix both streams decode with."""

    def __init__(self, weight):
        self.weight = np.array(weight, dtype=float)

    def project(self):
        np.maximum(self.weight, 0.0, out=self.weight)


@dataclass
class SaeParams:
    W_e: np.ndarray
    bn: nn.BatchNormState
    dropout: float
    decoder: SharedDecoder

    def params(self):
        return {"W_e": self.W_e, "gamma": self.bn.gamma, "beta": self.bn.beta}


@dataclass
class ScaeParams:
    kernels: List[np.ndarray]
    fc1: np.ndarray
    fc2: np.ndarray
    decoder: SharedDecoder

    def params(self):
        out = {f"conv{i + 1}": k for i, k in enumerate(self.kernels)}
        out["fc1"] = self.fc1
        out["fc2"] = self.fc2
        return out


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class SscuModel:
    sae: SaeParams
    scae: ScaeParams
    decoder: SharedDecoder
    config: TrainConfig
    rng: np.random.Generator
    adam: dict = field(default_factory=dict)
    epoch: int = 0

    @classmethod
    def create(cls, bands, p, config=None, endmembers=None):
        """Fresh model; ``endmembers`` (p, L) initialize the decoder."""
        config = (config or TrainConfig()).validate()
        F = flatten_length(bands)
        rng = np.random.default_rng(config.seed)
        if endmembers is None:
            W_d = rng.uniform(0.0, 1.0, size=(bands, p))
        else:
            E = getattr(endmembers, "signatures", endmembers)
            W_d = np.asarray(E, dtype=float).T
            if W_d.shape != (bands, p):
                raise ParameterError(f"endmembers shape {E.shape} does not match ({p}, {bands})")
        decoder = SharedDecoder(W_d)
        decoder.project()
        sae = SaeParams(_he(rng, (p, bands), bands), nn.BatchNormState.create(p),
                        config.dropout, decoder)
        kernels, c_in = [], 1
        for c_out, k in CONV_STAGES:
            kernels.append(_he(rng, (c_out, c_in, k), c_in * k))
            c_in = c_out
        scae = ScaeParams(kernels, _he(rng, (FC_HIDDEN, F), F), _he(rng, (p, FC_HIDDEN), FC_HIDDEN),
                          decoder)
        adam = {"sae": nn.AdamState(), "scae": nn.AdamState(), "decoder": nn.AdamState()}
        return cls(sae, scae, decoder, config, rng, adam)

    def init_sae_from_decoder(self, pixels):
        """Start the SAE encoder as the least-squares inverse of the decoder.

        The batch-norm affine parameters and running statistics are set to
        the statistics of the projected ``pixels`` so that BN is close to the
        identity on this data.
        """
        W_e = np.linalg.pinv(self.decoder.weight)
        z = np.asarray(pixels, dtype=float) @ W_e.T
        mean, var = z.mean(axis=0), z.var(axis=0)
        bn = self.sae.bn
        self.sae.W_e[...] = W_e
        bn.gamma[...] = np.sqrt(var + bn.eps)
        bn.beta[...] = mean
        bn.running_mean[...] = mean
        bn.running_var[...] = var

    @property
    def bands(self):
        return self.decoder.weight.shape[0]

    @property
    def p(self):
        return self.decoder.weight.shape[1]

    def parameter_count(self):
        n = sum(v.size for v in self.sae.params().values())
        n += sum(v.size for v in self.scae.params().values())
        return n + self.decoder.weight.size


# -- batches ------------------------------------------------------------------------

@dataclass
class Batch:
    """Pixels of a set of superpixels, flattened in superpixel order."""
    Y: np.ndarray          # (N, L) member spectra
    groups: np.ndarray     # (N,) local superpixel index of each pixel
    sizes: np.ndarray      # (Q,) member counts
    y_center: np.ndarray   # (Q, L) center-pixel spectra
    pixels: np.ndarray     # (N,) global row-major pixel indices
    weights: np.ndarray = None

    @property
    def count(self):
        return len(self.sizes)

    @property
    def pixel_weights(self):
        if self.weights is not None:
            return self.weights
        # double average: 1/Q over superpixels, 1/K within each
        return 1.0 / (self.count * self.sizes[self.groups])

    def subset(self, sel):
        """Pixel subset keeping the double-average weights (renormalized)."""
        w = self.pixel_weights[sel]
        return Batch(self.Y[sel], self.groups[sel], self.sizes, self.y_center,
                     self.pixels[sel], w / w.sum())


def make_batch(pixels, segmentation, ids):
    """``pixels`` is (n, L) in row-major order; ``ids`` select superpixels."""
    members = [segmentation.members[i] for i in ids]
    idx = np.concatenate(members)
    sizes = np.array([len(m) for m in members])
    groups = np.repeat(np.arange(len(members)), sizes)
    centers = np.asarray(segmentation.centers)[list(ids)]
    return Batch(pixels[idx], groups, sizes, pixels[centers], idx)


def single_group_batch(Y, center=None):
    """Batch holding one superpixel made of the rows of ``Y``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    K = Y.shape[0]
    yc = Y[center] if center is not None else Y[K // 2]
    return Batch(Y, np.zeros(K, dtype=int), np.array([K]), yc[None], np.arange(K))


# -- forward passes --------------------------------------------------------------------

@dataclass
class SaeOutput:
    x: np.ndarray          # (N, p) per-pixel abundances
    x_center: np.ndarray   # (Q, p) superpixel (center) abundances
    y_hat: np.ndarray      # (Q, L) reconstructed center spectra
    cache: tuple
    skipped: int = 0


def segment_mean(x, batch):
    out = np.zeros((batch.count, x.shape[1]))
    np.add.at(out, batch.groups, x)
    return out / batch.sizes[:, None]


def sae_forward(model, batch, mode="train", mask=None):
    sae = model.sae
    z, c_dense = nn.dense_forward(batch.Y, sae.W_e)
    b, c_bn = nn.batchnorm_forward(z, sae.bn, mode)
    d, drop_mask = nn.dropout_forward(b, sae.dropout, model.rng, mode, mask=mask)
    h, relu_mask = nn.relu_forward(d)
    x, c_l1 = nn.l1_normalize_forward(h, model.config.eps)
    x_c = segment_mean(x, batch)
    y_hat = x_c @ sae.decoder.weight.T
    return SaeOutput(x, x_c, y_hat, (c_dense, c_bn, drop_mask, relu_mask, c_l1))


def sae_backward(model, out, batch, dx, dx_center):
    """Encoder gradients given gradients w.r.t. per-pixel and center abundances."""
    c_dense, c_bn, drop_mask, relu_mask, c_l1 = out.cache
    dx = dx + (dx_center / batch.sizes[:, None])[batch.groups]
    dh = nn.l1_normalize_backward(dx, c_l1)
    dd = nn.relu_backward(dh, relu_mask)
    db = nn.dropout_backward(dd, drop_mask)
    dz, dgamma, dbeta = nn.batchnorm_backward(db, c_bn)
    _, dW = nn.dense_backward(dz, c_dense)
    return {"W_e": dW, "gamma": dgamma, "beta": dbeta}


@dataclass
class ScaeOutput:
    x: np.ndarray
    y_hat: np.ndarray
    cache: tuple
    skipped: int = 0


def scae_encode(model, Y):
    """Run the SCAE encoder on (N, L) spectra; returns (abundances, cache)."""
    scae = model.scae
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    L = Y.shape[1]
    if scae_stage_lengths(L) is None:
        raise ArchitectureError(f"SCAE needs at least {min_scae_bands()} bands, got {L}")
    a = Y[:, None, :]
    stages = []
    for k in scae.kernels:
        c, c_conv = nn.conv1d_forward(a, k)
        r, m = nn.relu_forward(c)
        a, idx = nn.maxpool1d_forward(r)
        stages.append((c_conv, m, idx, r.shape[2]))
    pooled_shape = a.shape
    flat = a.reshape(a.shape[0], -1)
    f1, c_f1 = nn.dense_forward(flat, scae.fc1)
    r1, m1 = nn.relu_forward(f1)
    f2, c_f2 = nn.dense_forward(r1, scae.fc2)
    if model.config.scae_output == "softmax":
        x, c_out = nn.softmax_forward(f2)
    else:
        h, m2 = nn.relu_forward(f2)
        x, c_l1 = nn.l1_normalize_forward(h, model.config.eps)
        c_out = (m2, c_l1)
    return x, (stages, pooled_shape, c_f1, m1, c_f2, c_out)


def scae_forward(model, Y):
    x, cache = scae_encode(model, Y)
    return ScaeOutput(x, x @ model.scae.decoder.weight.T, cache)


def scae_backward(model, out, dx):
    stages, pooled_shape, c_f1, m1, c_f2, c_out = out.cache
    grads = {}
    if model.config.scae_output == "softmax":
        df2 = nn.softmax_backward(dx, c_out)
    else:
        m2, c_l1 = c_out
        df2 = nn.relu_backward(nn.l1_normalize_backward(dx, c_l1), m2)
    dr1, grads["fc2"] = nn.dense_backward(df2, c_f2)
    df1 = nn.relu_backward(dr1, m1)
    dflat, grads["fc1"] = nn.dense_backward(df1, c_f1)
    da = dflat.reshape(pooled_shape)
    for i in range(len(stages) - 1, -1, -1):
        c_conv, m, idx, length = stages[i]
        dr = nn.maxpool1d_backward(da, idx, length)
        dc = nn.relu_backward(dr, m)
        da, grads[f"conv{i + 1}"] = nn.conv1d_backward(dc, c_conv)
    return grads


# -- loss terms ---------------------------------------------------------------------------

def _sad_term(y, y_hat, weights):
    """sum_i w_i SAD(y_i, y_hat_i); rows with a zero reconstruction are skipped."""
    ok = np.linalg.norm(y_hat, axis=1) > 0
    skipped = int((~ok).sum())
    dy_hat = np.zeros_like(y_hat)
    if skipped:
        log.debug("skipping %d sample(s) with zero reconstruction", skipped)
    if not ok.any():
        return 0.0, dy_hat, skipped
    ang, cache = nn.sad_forward(y[ok], y_hat[ok])
    dy_hat[ok] = nn.sad_backward(weights[ok], cache)
    return float(weights[ok] @ ang), dy_hat, skipped


def _lhalf_term(x, weights, lam):
    val, root = nn.l_half_forward(x)
    return float(lam * (weights @ val)), nn.l_half_backward(lam * weights, root)


def loss_sae(model, out, batch):
    """Mean over superpixels of SAD(center, reconstruction) + lam * L1/2(center abundance).

    Returns (value, d_y_hat, d_x_center).
    """
    w = np.full(batch.count, 1.0 / batch.count)
    s, dy, skipped = _sad_term(batch.y_center, out.y_hat, w)
    r, dxc = _lhalf_term(out.x_center, w, model.config.lam)
    out.skipped = skipped
    return s + r, dy, dxc


def loss_scae(model, out, batch):
    """Double average over superpixels and their pixels of SAD + lam * L1/2."""
    w = batch.pixel_weights
    s, dy, skipped = _sad_term(batch.Y, out.y_hat, w)
    r, dx = _lhalf_term(out.x, w, model.config.lam)
    out.skipped = skipped
    return s + r, dy, dx


def loss_col(x_sae, x_scae, batch):
    """Double average of ||x_sae - x_scae||^2; returns (value, d/dx_sae)."""
    x_sae = np.asarray(x_sae)
    x_scae = np.asarray(x_scae)
    if x_sae.shape != x_scae.shape or x_sae.shape[0] != batch.groups.shape[0]:
        raise ParameterError("collaborative loss needs matched pixel sets")
    w = batch.pixel_weights
    diff = x_sae - x_scae
    return float(w @ (diff * diff).sum(axis=1)), 2.0 * w[:, None] * diff


# -- phases ---------------------------------------------------------------------------------

def phase_a(model, batch, x_scae, mode="train", mask=None):
    """L_SAE + mu * L_COL with the SCAE abundances held constant.

    Returns (terms, sae_grads, decoder_grad, sae_output).
    """
    out = sae_forward(model, batch, mode, mask)
    l_sae, dy_hat, dxc = loss_sae(model, out, batch)
    l_col, dx_col = loss_col(out.x, x_scae, batch)
    mu = model.config.mu
    W_d = model.decoder.weight
    d_dec = dy_hat.T @ out.x_center
    dxc = dxc + dy_hat @ W_d
    grads = sae_backward(model, out, batch, mu * dx_col, dxc)
    terms = {"sae": l_sae, "col": l_col, "objective": l_sae + mu * l_col,
             "skipped": out.skipped}
    return terms, grads, d_dec, out


def phase_b(model, batch, x_sae):
    """L_SCAE + mu * L_COL with the SAE abundances held constant."""
    out = scae_forward(model, batch.Y)
    l_scae, dy_hat, dx = loss_scae(model, out, batch)
    l_col, dx_col = loss_col(out.x, x_sae, batch)
    mu = model.config.mu
    d_dec = dy_hat.T @ out.x
    dx = dx + dy_hat @ model.decoder.weight + mu * dx_col
    grads = scae_backward(model, out, dx)
    terms = {"scae": l_scae, "col": l_col, "objective": l_scae + mu * l_col,
             "skipped": out.skipped}
    return terms, grads, d_dec, out


def total_loss(model, batch, mode="eval", mask=None):
    """L_SAE + L_SCAE + mu * L_COL evaluated on ``batch`` (no updates)."""
    sae = sae_forward(model, batch, mode, mask)
    scae = scae_forward(model, batch.Y)
    l_sae = loss_sae(model, sae, batch)[0]
    l_scae = loss_scae(model, scae, batch)[0]
    l_col = loss_col(sae.x, scae.x, batch)[0]
    return {"sae": l_sae, "scae": l_scae, "col": l_col,
            "total": l_sae + l_scae + model.config.mu * l_col}


# -- training ---------------------------------------------------------------------------------

@dataclass
class EpochLoss:
    epoch: int
    sae: float
    scae: float
    col: float
    total: float
    skipped: int = 0


def _check_finite(values, epoch, batch_no):
    for term, v in values.items():
        if term == "skipped":
            continue
        if not np.isfinite(v):
            raise NumericalError(f"non-finite loss: epoch {epoch}, batch {batch_no}, term {term}")


def _step(model, group, grads, dec_grad):
    cfg = model.config
    params = model.sae.params() if group == "sae" else model.scae.params()
    nn.adam_step(params, grads, model.adam[group], cfg.lr_encoder)
    nn.adam_step({"W_d": model.decoder.weight}, {"W_d": dec_grad}, model.adam["decoder"],
                 cfg.lr_decoder)
    model.decoder.project()


def train(model, pixels, segmentation, config=None, callback=None):
    """Alternating two-phase training over shuffled superpixel batches.

    ``pixels`` is the (n, L) data in row-major pixel order. For each batch of
    ``batch_size`` superpixels, phase A takes one step on the SAE encoder and
    the decoder; phase B then steps the SCAE encoder and the decoder over
    the batch's pixels in shuffled chunks of ``pixel_batch_size``. The other
    stream's abundances are constants in each phase.
    ``callback(model, epoch, batch_no, phase)`` runs after every optimizer
    step. Returns the per-epoch loss trace.
    """
    cfg = (config or model.config).validate()
    model.config = cfg
    pixels = np.asarray(pixels, dtype=float)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    trace = []
    Q = segmentation.count
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        nb = 0
        skipped = 0
        perm = order_rng.permutation(Q)
        for batch_no, start in enumerate(range(0, Q, cfg.batch_size)):
            batch = make_batch(pixels, segmentation, perm[start:start + cfg.batch_size])

            x_scae, _ = scae_encode(model, batch.Y)
            terms_a, g_sae, d_dec, sae_out = phase_a(model, batch, x_scae, "train")
            _check_finite(terms_a, epoch, batch_no)
            _step(model, "sae", g_sae, d_dec)
            skipped += terms_a["skipped"]
            if callback is not None:
                callback(model, epoch, batch_no, "A")

            N = len(batch.Y)
            chunk = cfg.pixel_batch_size or N
            order = order_rng.permutation(N) if chunk < N else np.arange(N)
            l_scae = l_col = 0.0
            for s0 in range(0, N, chunk):
                sel = order[s0:s0 + chunk]
                sub = batch.subset(sel) if chunk < N else batch
                terms_b, g_scae, d_dec, _ = phase_b(model, sub, sae_out.x[sel])
                _check_finite(terms_b, epoch, batch_no)
                _step(model, "scae", g_scae, d_dec)
                skipped += terms_b["skipped"]
                share = batch.pixel_weights[sel].sum()
                l_scae += share * terms_b["scae"]
                l_col += share * terms_b["col"]
                if callback is not None:
                    callback(model, epoch, batch_no, "B")

            total = terms_a["sae"] + l_scae + cfg.mu * l_col
            sums += (terms_a["sae"], l_scae, l_col, total)
            nb += 1
        means = sums / nb
        model.epoch = epoch
        trace.append(EpochLoss(epoch, *map(float, means), skipped))
        if not np.all(np.isfinite(means)):
            raise NumericalError(f"non-finite epoch loss at epoch {epoch}")
        if skipped:
            log.warning("epoch %d: skipped %d sample(s) with zero reconstruction", epoch, skipped)
        log.debug("epoch %d total %.6f", epoch, means[3])
    return trace


# -- results -------------------------------------------------------------------------------------

@dataclass
class UnmixResult:
    endmembers: np.ndarray   # (p, L)
    abundances: np.ndarray   # (H, W, p)
    warnings: list = field(default_factory=list)
    report: object = None

    @property
    def ok(self):
        return not self.warnings


def extract_results(model, shape, pixels=None, chunk=4096):
    """Endmembers from the decoder and SCAE abundances for every pixel.

    ``shape`` is (H, W) or a bundle; with a bundle ``pixels`` may be omitted.
    """
    from .hsi import EndmemberSet, check_abundances, flatten
    if hasattr(shape, "cube"):
        H, W = shape.cube.height, shape.cube.width
        if pixels is None:
            pixels = flatten(shape.cube).T
    else:
        H, W = shape
    pixels = np.asarray(pixels, dtype=float)
    parts = [scae_encode(model, pixels[i:i + chunk])[0] for i in range(0, len(pixels), chunk)]
    X = np.concatenate(parts).reshape(H, W, model.p)
    E = model.decoder.weight.T.copy()
    warnings = []
    for label, check in (("endmembers", lambda: EndmemberSet(E)),
                         ("abundances", lambda: check_abundances(X))):
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - result is still emitted
            warnings.append(f"{label}: {exc}")
            log.warning("result %s invalid: %s", label, exc)
    return UnmixResult(E, X, warnings)


# -- checkpoints ------------------------------------------------------------------------------------

def _groups(model):
    bn = model.sae.bn
    return {
        "sae": [("W_e", model.sae.W_e), ("gamma", bn.gamma), ("beta", bn.beta),
                ("running_mean", bn.running_mean), ("running_var", bn.running_var)],
        "scae": list(model.scae.params().items()),
        "decoder": [("W_d", model.decoder.weight)],
    }


def save_checkpoint(model, path):
    os.makedirs(path, exist_ok=True)
    layout = {}
    for group, items in _groups(model).items():
        entries, offset = [], 0
        for name, arr in items:
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
        layout[group] = {"file": f"{group}.raw", "params": entries, "count": offset}
        write_f32(os.path.join(path, f"{group}.raw"),
                  np.concatenate([a.ravel() for _, a in items]))
    meta = {"bands": model.bands, "p": model.p, "epoch": model.epoch,
            "seed": model.config.seed, "config": asdict(model.config), "groups": layout,
            "dtype": "f32le"}
    with open(os.path.join(path, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(os.path.join(path, "model.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"model.json: {exc}") from None
    cfg = TrainConfig(**meta["config"])
    model = SscuModel.create(meta["bands"], meta["p"], cfg)
    targets = _groups(model)
    for group, info in meta["groups"].items():
        data = read_f32(os.path.join(path, info["file"]), info["count"], info["file"])
        for (name, arr), entry in zip(targets[group], info["params"]):
            if entry["name"] != name or list(arr.shape) != entry["shape"]:
                raise FormatError(f"{info['file']}: unexpected parameter {entry['name']}")
            arr[...] = data[entry["offset"]:entry["offset"] + arr.size].reshape(arr.shape)
    model.epoch = meta.get("epoch", 0)
    return model
