"""Finite-difference checks for every layer op and both training objectives.

Each check builds a small float64 problem, contracts the op output with a
fixed random upstream gradient to get a scalar, and compares the analytic
backward pass against central differences. Dropout masks are frozen and the
full-objective checks run batch-norm in eval mode (train mode is checked as
a separate layer case).
"""
import copy
import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import nn

TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    errors: dict
    seconds: float
    tol: float = TOL

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error) and self.max_error < self.tol)


def _contract(out, g):
    return float(np.sum(out * g))


# -- layer ops ---------------------------------------------------------------------

def _dense(rng):
    x = rng.normal(size=(4, 6))
    W = rng.normal(size=(3, 6))
    g = rng.normal(size=(4, 3))
    out, cache = nn.dense_forward(x, W)
    dx, dW = nn.dense_backward(g, cache)
    return lambda: _contract(nn.dense_forward(x, W)[0], g), {"x": x, "W": W}, {"x": dx, "W": dW}


def _conv1d(rng):
    x = rng.normal(size=(2, 2, 11))
    k = rng.normal(size=(3, 2, 4))
    g = rng.normal(size=(2, 3, 8))
    _, cache = nn.conv1d_forward(x, k)
    dx, dk = nn.conv1d_backward(g, cache)
    return lambda: _contract(nn.conv1d_forward(x, k)[0], g), {"x": x, "k": k}, {"x": dx, "k": dk}


def _maxpool1d(rng):
    # well separated values so the finite-difference step never flips a max
    x = rng.permutation(2 * 3 * 9).reshape(2, 3, 9) * 0.1
    g = rng.normal(size=(2, 3, 4))
    _, idx = nn.maxpool1d_forward(x)
    dx = nn.maxpool1d_backward(g, idx, 9)
    return lambda: _contract(nn.maxpool1d_forward(x)[0], g), {"x": x}, {"x": dx}


def _relu(rng):
    x = rng.normal(size=(5, 7))
    x += np.sign(x) * 0.1
    g = rng.normal(size=x.shape)
    _, mask = nn.relu_forward(x)
    return lambda: _contract(nn.relu_forward(x)[0], g), {"x": x}, {"x": nn.relu_backward(g, mask)}


def _batchnorm(mode):
    def build(rng):
        X = rng.normal(size=(6, 4))
        state = nn.BatchNormState.create(4)
        state.gamma[...] = rng.uniform(0.5, 1.5, 4)
        state.beta[...] = rng.normal(size=4)
        state.running_mean[...] = rng.normal(size=4)
        state.running_var[...] = rng.uniform(0.5, 2.0, 4)
        g = rng.normal(size=X.shape)

        def f():
            return _contract(nn.batchnorm_forward(X, copy.deepcopy(state), mode)[0], g)

        _, cache = nn.batchnorm_forward(X, copy.deepcopy(state), mode)
        dX, dgamma, dbeta = nn.batchnorm_backward(g, cache)
        return (f, {"X": X, "gamma": state.gamma, "beta": state.beta},
                {"X": dX, "gamma": dgamma, "beta": dbeta})
    return build


def _dropout(rng):
    x = rng.normal(size=(5, 4))
    g = rng.normal(size=x.shape)
    _, mask = nn.dropout_forward(x, 0.3, rng, "train")
    f = lambda: _contract(nn.dropout_forward(x, 0.3, None, "train", mask=mask)[0], g)  # noqa: E731
    return f, {"x": x}, {"x": nn.dropout_backward(g, mask)}


def _l1_normalize(rng):
    h = rng.uniform(0.1, 1.0, size=(4, 5))
    g = rng.normal(size=h.shape)
    _, cache = nn.l1_normalize_forward(h)
    return (lambda: _contract(nn.l1_normalize(h), g), {"h": h},
            {"h": nn.l1_normalize_backward(g, cache)})


def _softmax(rng):
    z = rng.normal(size=(4, 5))
    g = rng.normal(size=z.shape)
    _, out = nn.softmax_forward(z)
    return (lambda: _contract(nn.softmax_forward(z)[0], g), {"z": z},
            {"z": nn.softmax_backward(g, out)})


def _sad(rng):
    y = rng.uniform(0.1, 1.0, size=(4, 9))
    yhat = rng.uniform(0.1, 1.0, size=(4, 9))
    g = rng.normal(size=4)
    _, cache = nn.sad_forward(y, yhat)
    return (lambda: _contract(nn.sad(y, yhat), g), {"yhat": yhat},
            {"yhat": nn.sad_backward(g, cache)})


def _mse(rng):
    y = rng.normal(size=(3, 7))
    yhat = rng.normal(size=(3, 7))
    _, diff = nn.mse_forward(y, yhat)
    return lambda: nn.mse(y, yhat), {"yhat": yhat}, {"yhat": nn.mse_backward(1.0, diff)}


def _l_half(rng):
    x = rng.uniform(0.05, 1.0, size=(4, 5))
    g = rng.normal(size=4)
    _, root = nn.l_half_forward(x)
    return lambda: _contract(nn.l_half(x), g), {"x": x}, {"x": nn.l_half_backward(g, root)}


# -- full objectives on a three-superpixel toy scene ----------------------------------

def _toy(rng, bands=66, p=3):
    """Toy model plus a batch of three superpixels with 2, 3 and 4 pixels."""
    cfg = M.TrainConfig(seed=0, dropout=0.2, lam=0.05, mu=0.5)
    E = rng.uniform(0.1, 1.0, size=(p, bands))
    model = M.SscuModel.create(bands, p, cfg, E)
    sizes = np.array([2, 3, 4])
    groups = np.repeat(np.arange(3), sizes)
    A = rng.dirichlet(np.ones(p), size=len(groups))
    Y = A @ E + 0.01 * rng.normal(size=(len(groups), bands))
    centers = np.array([0, 3, 6])
    batch = M.Batch(Y, groups, sizes, Y[centers], np.arange(len(groups)))
    bn = model.sae.bn
    bn.running_mean[...] = rng.normal(size=p)
    bn.running_var[...] = rng.uniform(0.5, 2.0, p)
    bn.beta[...] = 1.0  # keep ReLU inputs away from the kink
    return model, batch


def _phase_a(rng):
    model, batch = _toy(rng)
    x_scae = rng.dirichlet(np.ones(model.p), size=len(batch.Y))
    mask = (rng.random((len(batch.Y), model.p)) >= 0.2) / 0.8

    def f():
        return M.phase_a(model, batch, x_scae, "eval", mask)[0]["objective"]

    _, grads, d_dec, _ = M.phase_a(model, batch, x_scae, "eval", mask)
    inputs = dict(model.sae.params())
    inputs["W_d"] = model.decoder.weight
    grads = dict(grads, W_d=d_dec)
    return f, inputs, grads


def _phase_b(rng):
    model, batch = _toy(rng)
    x_sae = rng.dirichlet(np.ones(model.p), size=len(batch.Y))

    def f():
        return M.phase_b(model, batch, x_sae)[0]["objective"]

    _, grads, d_dec, _ = M.phase_b(model, batch, x_sae)
    inputs = dict(model.scae.params())
    inputs["W_d"] = model.decoder.weight
    grads = dict(grads, W_d=d_dec)
    return f, inputs, grads


CHECKS = [
    ("dense", _dense),
    ("conv1d", _conv1d),
    ("maxpool1d", _maxpool1d),
    ("relu", _relu),
    ("batchnorm_train", _batchnorm("train")),
    ("batchnorm_eval", _batchnorm("eval")),
    ("dropout", _dropout),
    ("l1_normalize", _l1_normalize),
    ("softmax", _softmax),
    ("sad", _sad),
    ("mse", _mse),
    ("l_half", _l_half),
    ("objective_phase_a", _phase_a),
    ("objective_phase_b", _phase_b),
]


def run_checks(names=None, seed=0, tol=TOL, h=1e-5):
    """Run the named checks (all by default); returns a list of CheckResult."""
    results = []
    for name, build in CHECKS:
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, len(results)])
        t0 = time.perf_counter()
        f, inputs, analytic = build(rng)
        rep = nn.grad_check(f, inputs, analytic, tol=tol, h=h)
        results.append(CheckResult(name, rep.errors, time.perf_counter() - t0, tol))
    return results


def format_report(results):
    lines = [f"{'check':<20} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.max_error:12.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
