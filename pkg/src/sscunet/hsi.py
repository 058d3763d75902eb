"""Hyperspectral cubes, endmember sets, abundance fields and bundle I/O.

A bundle is a directory::

    header.json          name, height, width, bands, dtype "f32le", interleave "bsq",
                         optional wavelengths
    cube.raw             H*W*L little-endian float32, band-sequential
    gt_endmembers.csv    optional, p rows x L columns
    gt_abundances.raw    optional, H*W*p little-endian float32, pixel-major
"""
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstraintError, DimensionError, FormatError

ASC_TOL = 1e-5
F32LE = np.dtype("<f4")


@dataclass
class HsiCube:
    reflectance: np.ndarray  # (H, W, L)
    wavelengths: Optional[list] = None

    def __post_init__(self):
        r = np.asarray(self.reflectance)
        if r.ndim != 3:
            raise DimensionError(f"cube must be H x W x L, got shape {r.shape}")
        if r.shape[0] * r.shape[1] < 1 or r.shape[2] < 2:
            raise DimensionError(f"cube needs at least one pixel and two bands, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise FormatError("cube contains non-finite reflectance values")
        if self.wavelengths is not None and len(self.wavelengths) != r.shape[2]:
            raise DimensionError("wavelength list length differs from band count")
        self.reflectance = r

    @property
    def height(self):
        return self.reflectance.shape[0]

    @property
    def width(self):
        return self.reflectance.shape[1]

    @property
    def bands(self):
        return self.reflectance.shape[2]


@dataclass
class EndmemberSet:
    signatures: np.ndarray  # (p, L)

    def __post_init__(self):
        s = np.asarray(self.signatures, dtype=float)
        if s.ndim != 2:
            raise DimensionError(f"endmember signatures must be p x L, got {s.shape}")
        if np.any(s < 0):
            raise ConstraintError("endmember signatures must be nonnegative")
        if np.any(np.linalg.norm(s, axis=1) == 0):
            raise ConstraintError("endmember signature with zero norm")
        self.signatures = s

    @property
    def count(self):
        return self.signatures.shape[0]


def check_abundances(fractions, tol=ASC_TOL):
    """Raise ConstraintError unless every pixel satisfies ANC and ASC."""
    if np.any(fractions < 0):
        bad = np.argwhere(fractions < 0)[0]
        raise ConstraintError(f"negative abundance at index {tuple(bad)}")
    sums = fractions.sum(axis=-1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > tol):
        idx = np.unravel_index(np.argmax(dev), dev.shape)
        raise ConstraintError(
            f"abundance sum-to-one violated at pixel {tuple(int(i) for i in idx)}: "
            f"sum {sums[idx]:.8f}")


@dataclass
class AbundanceField:
    fractions: np.ndarray  # (H, W, p)

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=float)
        if f.ndim != 3:
            raise DimensionError(f"abundance field must be H x W x p, got {f.shape}")
        check_abundances(f)
        self.fractions = f

    @property
    def count(self):
        return self.fractions.shape[2]


@dataclass
class DatasetBundle:
    name: str
    cube: HsiCube
    gt_endmembers: Optional[EndmemberSet] = None
    gt_abundances: Optional[AbundanceField] = None

    def __post_init__(self):
        L = self.cube.bands
        if self.gt_endmembers is not None and self.gt_endmembers.signatures.shape[1] != L:
            raise FormatError("ground-truth endmembers do not match cube band count")
        if self.gt_abundances is not None:
            if self.gt_abundances.fractions.shape[:2] != self.cube.reflectance.shape[:2]:
                raise FormatError("ground-truth abundances do not match cube size")
            if (self.gt_endmembers is not None
                    and self.gt_abundances.count != self.gt_endmembers.count):
                raise FormatError("ground-truth endmember and abundance counts differ")


def flatten(cube):
    """(H, W, L) cube (or HsiCube) -> (L, n) matrix; column j is pixel (j // W, j % W)."""
    r = cube.reflectance if isinstance(cube, HsiCube) else np.asarray(cube)
    H, W, L = r.shape
    return r.reshape(H * W, L).T.copy()


def unflatten(matrix, H, W):
    """Inverse of :func:`flatten`."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != H * W:
        raise DimensionError(f"cannot unflatten {matrix.shape} into {H} x {W}")
    return matrix.T.reshape(H, W, matrix.shape[0]).copy()


# -- raw float helpers ----------------------------------------------------------

def write_f32(path, array):
    data = np.ascontiguousarray(array, dtype=F32LE)
    with open(path, "wb") as fh:
        fh.write(data.tobytes())


def read_f32(path, count, label):
    expected = count * 4
    size = os.path.getsize(path)
    if size != expected:
        raise FormatError(f"{label}: expected {expected} bytes ({count} float32 values), "
                          f"found {size}")
    data = np.fromfile(path, dtype=F32LE).astype(float)
    if not np.all(np.isfinite(data)):
        bad = int(np.argmax(~np.isfinite(data)))
        raise FormatError(f"{label}: non-finite value at offset {bad}")
    return data


def write_csv_matrix(path, matrix):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.asarray(matrix, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv_matrix(path, label):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise FormatError(f"{label}: line {lineno}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{label}: empty or ragged matrix")
    out = np.array(rows)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{label}: non-finite value")
    return out


# -- bundles --------------------------------------------------------------------

def save_bundle(bundle, path):
    """Write ``bundle`` to directory ``path`` in the canonical layout."""
    if bundle.gt_abundances is not None:
        check_abundances(bundle.gt_abundances.fractions)
    os.makedirs(path, exist_ok=True)
    cube = bundle.cube
    header = {
        "name": bundle.name,
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "f32le",
        "interleave": "bsq",
    }
    if cube.wavelengths is not None:
        header["wavelengths"] = [float(w) for w in cube.wavelengths]
    with open(os.path.join(path, "header.json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # band-sequential: band index varies slowest
    write_f32(os.path.join(path, "cube.raw"), cube.reflectance.transpose(2, 0, 1))
    for fname in ("gt_endmembers.csv", "gt_abundances.raw"):
        fpath = os.path.join(path, fname)
        if os.path.exists(fpath):
            os.remove(fpath)
    if bundle.gt_endmembers is not None:
        write_csv_matrix(os.path.join(path, "gt_endmembers.csv"), bundle.gt_endmembers.signatures)
    if bundle.gt_abundances is not None:
        write_f32(os.path.join(path, "gt_abundances.raw"), bundle.gt_abundances.fractions)


def _header_int(header, key):
    try:
        value = header[key]
    except KeyError:
        raise FormatError(f"header.json: missing key {key!r}") from None
    if not isinstance(value, int) or value < 1:
        raise FormatError(f"header.json: {key!r} must be a positive integer, got {value!r}")
    return value


def load_bundle(path):
    hpath = os.path.join(path, "header.json")
    if not os.path.isfile(hpath):
        raise FormatError(f"{path}: missing header.json")
    try:
        with open(hpath, encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"header.json: {exc}") from None
    H, W, L = (_header_int(header, k) for k in ("height", "width", "bands"))
    if header.get("dtype", "f32le") != "f32le" or header.get("interleave", "bsq") != "bsq":
        raise FormatError("header.json: only dtype f32le with bsq interleave is supported")
    cpath = os.path.join(path, "cube.raw")
    if not os.path.isfile(cpath):
        raise FormatError(f"{path}: missing cube.raw")
    data = read_f32(cpath, H * W * L, "cube.raw")
    try:
        cube = HsiCube(data.reshape(L, H, W).transpose(1, 2, 0).copy(), header.get("wavelengths"))
    except (DimensionError, ConstraintError) as exc:
        raise FormatError(f"header.json: {exc}") from None

    gt_e = gt_a = None
    epath = os.path.join(path, "gt_endmembers.csv")
    if os.path.isfile(epath):
        sig = read_csv_matrix(epath, "gt_endmembers.csv")
        if sig.shape[1] != L:
            raise FormatError(f"gt_endmembers.csv: {sig.shape[1]} columns, expected {L}")
        try:
            gt_e = EndmemberSet(sig)
        except ConstraintError as exc:
            raise FormatError(f"gt_endmembers.csv: {exc}") from None
    apath = os.path.join(path, "gt_abundances.raw")
    if os.path.isfile(apath):
        size = os.path.getsize(apath)
        p = gt_e.count if gt_e is not None else size // (4 * H * W)
        if p < 1:
            raise FormatError("gt_abundances.raw: too small")
        frac = read_f32(apath, H * W * p, "gt_abundances.raw").reshape(H, W, p)
        try:
            gt_a = AbundanceField(frac)
        except ConstraintError as exc:
            raise FormatError(f"gt_abundances.raw: {exc}") from None
    return DatasetBundle(header.get("name", os.path.basename(os.path.normpath(path))),
                         cube, gt_e, gt_a)
