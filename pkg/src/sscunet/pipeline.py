"""VCA -> FCLS -> SLIC -> two-stream training -> extraction."""
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hsi import flatten
from .initializers import VcaConfig, fcls, vca
from .metrics import evaluate
from .model import SscuModel, TrainConfig, extract_results, train
from .superpixel import SlicConfig, slic_segment

log = logging.getLogger(__name__)


@dataclass
class PipelineOutput:
    result: object
    model: SscuModel
    segmentation: object
    trace: list
    vca_endmembers: np.ndarray
    fcls_abundances: np.ndarray
    metrics: Optional[dict] = None
    timings: dict = field(default_factory=dict)


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.original = exc


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def run_unmix(bundle, p=None, train_cfg=None, slic_cfg=None, callback=None):
    """Full unmixing of ``bundle``; metrics are filled in when ground truth exists."""
    train_cfg = (train_cfg or TrainConfig()).validate()
    slic_cfg = (slic_cfg or SlicConfig()).validate()
    if p is None:
        if bundle.gt_endmembers is None:
            raise ValueError("number of endmembers p is required without ground truth")
        p = bundle.gt_endmembers.count
    cube = bundle.cube
    H, W = cube.height, cube.width
    Y = flatten(cube)
    timings = {}

    vres = _stage("vca", timings, vca, Y, VcaConfig(p, train_cfg.seed))
    X0 = _stage("fcls", timings, fcls, Y, vres.endmembers)
    field0 = X0.T.reshape(H, W, p)
    seg = _stage("segment", timings, slic_segment, field0, slic_cfg)
    model = SscuModel.create(cube.bands, p, train_cfg, vres.endmembers)
    if train_cfg.encoder_init == "vca":
        model.init_sae_from_decoder(Y.T)
    trace = _stage("train", timings, train, model, Y.T, seg, train_cfg, callback)
    result = _stage("extract", timings, extract_results, model, (H, W), Y.T)

    out = PipelineOutput(result, model, seg, trace, vres.endmembers.signatures, field0,
                         timings=timings)
    if bundle.gt_endmembers is not None:
        meta = {"seed": train_cfg.seed}
        sscu = evaluate(result.endmembers, bundle.gt_endmembers, result.abundances,
                        bundle.gt_abundances, meta)
        base = evaluate(vres.endmembers, bundle.gt_endmembers, field0, bundle.gt_abundances, meta)
        result.report = sscu
        out.metrics = {"sscu": sscu.to_dict(), "baseline_vca_fcls": base.to_dict()}
    return out
