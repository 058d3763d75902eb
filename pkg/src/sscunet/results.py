"""Result directories: endmembers, abundances, maps, segmentations, traces."""
import csv
import json
import os

import numpy as np

from .errors import FormatError
from .hsi import read_csv_matrix, read_f32, write_csv_matrix, write_f32


def write_pgm(path, image, maxval=255):
    """Binary PGM (P5). 8-bit for maxval < 256, else 16-bit big-endian."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if image.min() < 0 or image.max() > maxval:
        raise ValueError(f"PGM values must lie in 0..{maxval}")
    H, W = image.shape
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=dtype).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    W, H, maxval = (int(f) for f in fields[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    img = np.frombuffer(data[pos:], dtype=dtype)
    if img.size != H * W:
        raise FormatError(f"{path}: expected {H * W} pixels, found {img.size}")
    return img.reshape(H, W).astype(np.int64), maxval


def abundance_map(fractions):
    """8-bit gray levels round(255 * fraction)."""
    return np.rint(255.0 * np.clip(fractions, 0.0, 1.0)).astype(np.uint8)


def write_abundances(out_dir, fractions, maps=True):
    """abundances.raw (H*W*p f32le, pixel-major) with abundances.json, plus PGM maps."""
    H, W, p = fractions.shape
    write_f32(os.path.join(out_dir, "abundances.raw"), fractions)
    header = {"height": H, "width": W, "endmembers": p, "dtype": "f32le",
              "layout": "pixel-major"}
    write_json(os.path.join(out_dir, "abundances.json"), header)
    if maps:
        mdir = os.path.join(out_dir, "maps")
        os.makedirs(mdir, exist_ok=True)
        for i in range(p):
            write_pgm(os.path.join(mdir, f"abundance_{i + 1}.pgm"), abundance_map(fractions[..., i]))


def read_abundances(out_dir):
    hpath = os.path.join(out_dir, "abundances.json")
    try:
        with open(hpath, encoding="utf-8") as fh:
            header = json.load(fh)
        H, W, p = header["height"], header["width"], header["endmembers"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"abundances.json: {exc}") from None
    data = read_f32(os.path.join(out_dir, "abundances.raw"), H * W * p, "abundances.raw")
    return data.reshape(H, W, p)


def write_endmembers(out_dir, signatures):
    write_csv_matrix(os.path.join(out_dir, "endmembers.csv"), signatures)


def read_endmembers(out_dir):
    path = os.path.join(out_dir, "endmembers.csv")
    if not os.path.isfile(path):
        raise FormatError(f"{out_dir}: missing endmembers.csv")
    return read_csv_matrix(path, "endmembers.csv")


def write_segmentation(out_dir, seg):
    """labels.pgm (16-bit ids) and superpixels.csv (id, size, center row/col)."""
    if seg.count > 65535:
        raise ValueError("too many superpixels for a 16-bit label map")
    write_pgm(os.path.join(out_dir, "labels.pgm"), seg.labels, maxval=65535)
    W = seg.shape[1]
    with open(os.path.join(out_dir, "superpixels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "size", "center_row", "center_col"])
        for i, (m, c) in enumerate(zip(seg.members, seg.centers)):
            w.writerow([i, len(m), int(c) // W, int(c) % W])


def write_loss_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_SAE", "L_SCAE", "L_COL", "total", "skipped"])
        for e in trace:
            w.writerow([e.epoch, repr(e.sae), repr(e.scae), repr(e.col), repr(e.total), e.skipped])


def read_loss_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r[k]) for k in ("L_SAE", "L_SCAE", "L_COL", "total")] for r in rows])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

