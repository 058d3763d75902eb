"""Pure NumPy implementations of the hot kernels.

These are the reference versions; the compiled module ``_ckernels`` must
produce identical results (up to floating-point summation order).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(x, kernels):
    # x: (B, C_in, L), kernels: (C_out, C_in, k) -> (B, C_out, L - k + 1)
    B, C_in, L = x.shape
    C_out, _, k = kernels.shape
    L_out = L - k + 1
    win = sliding_window_view(x, k, axis=2)  # (B, C_in, L_out, k)
    cols = win.transpose(0, 2, 1, 3).reshape(B * L_out, C_in * k)
    out = cols @ kernels.reshape(C_out, C_in * k).T
    return np.ascontiguousarray(out.reshape(B, L_out, C_out).transpose(0, 2, 1))


def conv1d_backward(grad, x, kernels):
    B, C_in, L = x.shape
    C_out, _, k = kernels.shape
    L_out = L - k + 1
    win = sliding_window_view(x, k, axis=2)
    cols = win.transpose(0, 2, 1, 3).reshape(B * L_out, C_in * k)
    g2 = grad.transpose(0, 2, 1).reshape(B * L_out, C_out)
    dk = (g2.T @ cols).reshape(C_out, C_in, k)
    dcols = (g2 @ kernels.reshape(C_out, C_in * k)).reshape(B, L_out, C_in, k)
    dx = np.zeros_like(x)
    for j in range(k):
        dx[:, :, j:j + L_out] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dx, dk


def maxpool1d_forward(x):
    # window 2, stride 2, trailing odd element dropped
    B, C, L = x.shape
    half = L // 2
    pairs = x[:, :, :2 * half].reshape(B, C, half, 2)
    # argmax returns the first occurrence on ties
    which = np.argmax(pairs, axis=3)
    out = np.take_along_axis(pairs, which[..., None], axis=3)[..., 0]
    idx = 2 * np.arange(half) + which
    return out, idx


def maxpool1d_backward(grad, idx, length):
    B, C, half = grad.shape
    dx = np.zeros((B, C, length), dtype=grad.dtype)
    np.put_along_axis(dx, idx, grad, axis=2)
    return dx


def slic_assign(features, centers_feat, centers_pos, S, m, labels, dist):
    """One SLIC assignment sweep over every seed window.

    A seed at (r, c) competes for pixels with |row - r| <= S and
    |col - c| <= S. ``labels`` and ``dist`` (squared compound distance) are
    updated in place; pixels outside every window keep their label. Seeds
    are visited in id order and a pixel only moves on a strictly smaller
    distance, so ties go to the lower seed id.
    """
    H, W, _ = features.shape
    dist.fill(np.inf)
    scale = (m / S) ** 2
    for k in range(centers_pos.shape[0]):
        r, c = centers_pos[k]
        r0 = max(int(np.ceil(r - S)), 0)
        r1 = min(int(np.floor(r + S)) + 1, H)
        c0 = max(int(np.ceil(c - S)), 0)
        c1 = min(int(np.floor(c + S)) + 1, W)
        if r0 >= r1 or c0 >= c1:
            continue
        diff = features[r0:r1, c0:c1] - centers_feat[k]
        d_abu = np.einsum('ijk,ijk->ij', diff, diff)
        rr = np.arange(r0, r1)[:, None] - r
        cc = np.arange(c0, c1)[None, :] - c
        d2 = d_abu * d_abu + (rr * rr + cc * cc) * scale
        box = dist[r0:r1, c0:c1]
        better = d2 < box
        box[better] = d2[better]
        labels[r0:r1, c0:c1][better] = k
