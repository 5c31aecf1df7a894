"""Rate-accuracy evaluation: bpp measurement, Pareto fronts, Bjontegaard
delta rate, rate sweeps, and complexity reporting.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .codec import Bitstream
from .errors import ConfigurationError, FormatError
from .layers import GDN

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0

# informational reference values for 256x256 probes (published figures for a
# full-scale instantiation; our widths differ, so no tolerance is attached)
REFERENCE_COMPLEXITY = {
    "token_extractor": dict(gflops=365.8, params_m=85.64, time_s=0.0436),
    "preedit": dict(gflops=2.420, params_m=23.51, time_s=0.0248),
    "encoder": dict(gflops=12.22, params_m=30.97, time_s=0.0215),
    "decoder": dict(gflops=12.11, params_m=30.45, time_s=0.0203),
}


class RAPoint(NamedTuple):
    rate: float
    metric: float


def _check_point(p: RAPoint) -> RAPoint:
    if not (p.rate > 0 and math.isfinite(p.rate) and math.isfinite(p.metric)):
        raise ConfigurationError(f"invalid rate-accuracy point {p}")
    return RAPoint(float(p.rate), float(p.metric))


def bpp(bs: Bitstream | bytes) -> float:
    """Bits per pixel of the full container, exact rational arithmetic."""
    if isinstance(bs, (bytes, bytearray)):
        bs = Bitstream.unpack(bytes(bs))
    if bs.orig_h <= 0 or bs.orig_w <= 0:
        raise FormatError("container header has empty image dimensions")
    return float(Fraction(8 * bs.total_bytes, bs.orig_h * bs.orig_w))


def pareto_front(points: Sequence[RAPoint]) -> List[RAPoint]:
    """Nondominated subset, rate ascending; a point dominates another when its
    rate is <= and metric >= with at least one strict inequality."""
    if not points:
        raise ConfigurationError("pareto_front needs at least one point")
    pts = sorted((_check_point(RAPoint(*p)) for p in points),
                 key=lambda p: (p.rate, -p.metric))
    kept: List[RAPoint] = []
    best_metric = -math.inf
    best_rate = math.inf
    for p in pts:
        dominated = best_metric > p.metric or (
            best_metric == p.metric and best_rate < p.rate
        )
        if not dominated:
            kept.append(p)
        if p.metric > best_metric:
            best_metric, best_rate = p.metric, p.rate
        elif p.metric == best_metric:
            best_rate = min(best_rate, p.rate)
    return kept


def _is_monotone(points: Sequence[RAPoint]) -> bool:
    ordered = sorted(points, key=lambda p: p.rate)
    return all(a.metric <= b.metric for a, b in zip(ordered, ordered[1:]))


def _usable_curve(points: Sequence[RAPoint]) -> List[RAPoint]:
    pts = [_check_point(RAPoint(*p)) for p in points]
    if not _is_monotone(pts):
        pts = pareto_front(pts)
    return sorted(pts, key=lambda p: p.metric)


def bd_rate(anchor: Sequence[RAPoint], test: Sequence[RAPoint]) -> float:
    """Bjontegaard delta rate in percent (negative = bitrate savings).

    Fits log10(rate) as a cubic in the metric for each curve and integrates
    the difference over the overlapping metric interval.  Nonmonotonic curves
    are Pareto-filtered first.
    """
    a = _usable_curve(anchor)
    t = _usable_curve(test)
    for name, pts in (("anchor", a), ("test", t)):
        if len({p.metric for p in pts}) < 4:
            raise ConfigurationError(
                f"{name} curve needs >= 4 points with distinct metrics, "
                f"got {len(pts)}"
            )
    lo = max(min(p.metric for p in a), min(p.metric for p in t))
    hi = min(max(p.metric for p in a), max(p.metric for p in t))
    if not hi > lo:
        raise ConfigurationError("metric ranges do not overlap")

    # shared affine normalization of the metric axis: conditions the fit and
    # makes the result invariant to affine metric relabeling by construction
    u_lo = min(p.metric for p in a + t)
    u_hi = max(p.metric for p in a + t)
    span = u_hi - u_lo

    def fit(pts):
        m = np.array([(p.metric - u_lo) / span for p in pts])
        r = np.log10([p.rate for p in pts])
        return np.polyfit(m, r, 3)

    pa, pt = fit(a), fit(t)
    lo_n, hi_n = (lo - u_lo) / span, (hi - u_lo) / span
    ia = np.polyval(np.polyint(pa), hi_n) - np.polyval(np.polyint(pa), lo_n)
    it = np.polyval(np.polyint(pt), hi_n) - np.polyval(np.polyint(pt), lo_n)
    avg_diff = (it - ia) / (hi_n - lo_n)
    return float((10.0 ** avg_diff - 1.0) * 100.0)


def psnr(reference: torch.Tensor, decoded: torch.Tensor) -> float:
    """PSNR in dB on [0,1] images, capped at 100 dB for (near-)lossless pairs."""
    mse = float(((reference - decoded) ** 2).mean())
    if mse <= 10 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


@dataclass
class CurvePoint:
    q: int
    bpp: float
    metric: float
    n_images: int

    def as_ra(self) -> RAPoint:
        return RAPoint(self.bpp, self.metric)


def sweep_curve(images: Sequence[torch.Tensor], pipeline, metric_fn: Callable =
                psnr, use_preedit: bool = True,
                csv_path=None) -> List[CurvePoint]:
    """Compress/decompress every image at every q; average bpp and metric.

    ``metric_fn(reference, decoded) -> float``; failures exclude the image
    from that q's average with a warning.
    """
    points = []
    for q in range(pipeline.q_levels):
        rates, metrics = [], []
        for i, image in enumerate(images):
            bs = pipeline.encode_image(image, q, use_preedit=use_preedit)
            decoded, _ = pipeline.decode_image(bs)
            try:
                m = float(metric_fn(image, decoded))
            except Exception as e:  # noqa: BLE001 - plugin boundary
                log.warning("metric failed on image %d at q=%d: %s", i, q, e)
                continue
            rates.append(bpp(bs))
            metrics.append(m)
        if not rates:
            raise ConfigurationError(f"metric failed on every image at q={q}")
        points.append(CurvePoint(q=q, bpp=float(np.mean(rates)),
                                 metric=float(np.mean(metrics)),
                                 n_images=len(rates)))
    if csv_path is not None:
        write_curve_csv(csv_path, points)
    return points


def write_curve_csv(path, points: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["q", "bpp", "metric", "n_images"])
        for p in points:
            w.writerow([p.q, repr(p.bpp), repr(p.metric), p.n_images])


def read_curve_csv(path) -> List[CurvePoint]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["q", "bpp", "metric", "n_images"]:
        raise FormatError(f"{path}: not a rate-accuracy curve CSV")
    return [CurvePoint(q=int(r[0]), bpp=float(r[1]), metric=float(r[2]),
                       n_images=int(r[3])) for r in rows[1:]]


def plot_curves(curves: Dict[str, Sequence[RAPoint]], path) -> None:
    """Rate-accuracy plot; output format follows the file suffix (svg/png)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, pts in curves.items():
        pts = sorted(pts, key=lambda p: p.rate)
        ax.plot([p.rate for p in pts], [p.metric for p in pts],
                marker="o", label=name)
    ax.set_xlabel("bpp")
    ax.set_ylabel("metric")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --- complexity ---------------------------------------------------------------

@dataclass
class ComplexityReport:
    flops: int
    params: int
    time_s: float

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def params_m(self) -> float:
        return self.params / 1e6


def _module_flops(module: nn.Module, out_shape) -> int:
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        c_in = module.in_channels // module.groups
        c_out, h, w = out_shape[-3:]
        return 2 * kh * kw * c_in * c_out * h * w
    if isinstance(module, nn.Linear):
        batch = int(np.prod(out_shape[:-1])) if len(out_shape) > 1 else 1
        return 2 * module.in_features * module.out_features * batch
    if isinstance(module, GDN):
        c, h, w = out_shape[-3:]
        return 2 * c * c * h * w  # the gamma coupling is a 1x1 convolution
    return 0


def complexity_report(module: nn.Module, args: tuple,
                      timing_runs: int = 10) -> ComplexityReport:
    """Analytic FLOP count over conv/linear layers, exact parameter count, and
    median wall-clock over >= 10 timed runs."""
    flops = 0
    handles = []

    def hook(mod, _inp, out):
        nonlocal flops
        shape = out.shape if torch.is_tensor(out) else out[0].shape
        flops += _module_flops(mod, tuple(shape))

    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear, GDN)):
            handles.append(m.register_forward_hook(hook))
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(*args)
        for h in handles:
            h.remove()
        handles = []
        times = []
        with torch.no_grad():
            for _ in range(max(timing_runs, 10)):
                t0 = time.perf_counter()
                module(*args)
                times.append(time.perf_counter() - t0)
    finally:
        for h in handles:
            h.remove()
        module.train(was_training)
    params = sum(p.numel() for p in module.parameters())
    return ComplexityReport(flops=flops, params=params,
                            time_s=float(np.median(times)))


def extractor_complexity(extractor, size: int = 256,
                         timing_runs: int = 10) -> ComplexityReport:
    """Closed-form count for the patch-pool + projection extractor."""
    n_patches = (size // extractor.patch) ** 2
    flops = 3 * size * size + 2 * 3 * extractor.output_dim * n_patches
    params = extractor.output_dim * 3
    probe = torch.rand(3, size, size)
    times = []
    with torch.no_grad():
        for _ in range(max(timing_runs, 10)):
            t0 = time.perf_counter()
            extractor.extract(probe)
            times.append(time.perf_counter() - t0)
    return ComplexityReport(flops=flops, params=params,
                            time_s=float(np.median(times)))
