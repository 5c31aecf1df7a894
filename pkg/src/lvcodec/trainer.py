"""Three-stage optimization pipeline with data ingestion, q sampling,
checkpointing, and CSV logging.

Stage 1 trains the codec alone on original images without token terms;
stage 2 trains the pre-editor against the frozen codec with the full loss and
a cosine-annealed learning rate; stage 3 fine-tunes both jointly with small
constant rates.  Every step samples a q index uniformly and applies the
matching weight preset.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .errors import ConfigurationError
from .losses import (
    LambdaPreset,
    default_presets,
    presets_from_json,
    presets_to_json,
    total_loss,
)
from .pipeline import Pipeline, build_pipeline, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

ADAM_BETAS = (0.5, 0.999)

STAGE_DEFAULTS = {
    1: dict(iterations=200_000, lr_codec=1e-4, schedule="constant"),
    2: dict(iterations=150_000, lr_preedit=1e-4, schedule="cosine"),
    3: dict(iterations=150_000, lr_codec=1e-5, lr_preedit=1e-6,
            schedule="constant"),
}

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


@dataclass
class TrainConfig:
    stage: int
    dataset_path: str
    iterations: Optional[int] = None
    batch_size: int = 8
    crop_size: int = 256
    lr_codec: Optional[float] = None
    lr_preedit: Optional[float] = None
    lr_end: float = 1e-6
    schedule: Optional[str] = None
    seed: int = 0
    extractor: str = "toy"
    codec: dict = field(default_factory=dict)
    preedit: dict = field(default_factory=dict)
    presets: Optional[list] = None
    out_dir: str = "runs"
    log_csv: Optional[str] = None

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigurationError(f"stage must be 1, 2 or 3, got {self.stage}")
        defaults = STAGE_DEFAULTS[self.stage]
        if self.iterations is None:
            self.iterations = defaults["iterations"]
        if self.schedule is None:
            self.schedule = defaults["schedule"]
        if self.lr_codec is None:
            self.lr_codec = defaults.get("lr_codec")
        if self.lr_preedit is None:
            self.lr_preedit = defaults.get("lr_preedit")
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.stage in (1, 3) and not self.lr_codec:
            raise ConfigurationError(f"stage {self.stage} requires lr_codec")
        if self.stage in (2, 3) and not self.lr_preedit:
            raise ConfigurationError(f"stage {self.stage} requires lr_preedit")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            data = json.load(f)
        return cls(**data)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)

    def resolved_presets(self, q_levels: int) -> Tuple[LambdaPreset, ...]:
        if self.presets is not None:
            return presets_from_json(self.presets)
        return default_presets(q_levels)


def list_image_files(path) -> List[Path]:
    root = Path(path)
    if not root.is_dir():
        raise ConfigurationError(f"dataset path {path!r} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image(path) -> np.ndarray:
    """Image file -> float32 HxWx3 in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def load_dataset(path, crop_size: int, seed: int,
                 batch_size: int = 8) -> Tuple[Iterator[torch.Tensor], int]:
    """Infinite iterator of (B,3,crop,crop) batches with flips, plus the count
    of usable images.  Undersized or unreadable files are skipped with a
    warning; an empty dataset raises."""
    images = []
    skipped = 0
    for p in list_image_files(path):
        try:
            arr = load_image(p)
        except OSError as e:
            log.warning("skipping unreadable image %s (%s)", p, e)
            skipped += 1
            continue
        if arr.shape[0] < crop_size or arr.shape[1] < crop_size:
            log.warning("skipping %s: %dx%d smaller than crop %d",
                        p, arr.shape[0], arr.shape[1], crop_size)
            skipped += 1
            continue
        images.append(arr)
    if skipped:
        log.warning("excluded %d images from %s", skipped, path)
    if not images:
        raise ConfigurationError(f"no usable images in {path!r}")

    def batches() -> Iterator[torch.Tensor]:
        rng = np.random.default_rng(seed)
        while True:
            out = np.empty((batch_size, 3, crop_size, crop_size), dtype=np.float32)
            for b in range(batch_size):
                arr = images[rng.integers(len(images))]
                i = rng.integers(arr.shape[0] - crop_size + 1)
                j = rng.integers(arr.shape[1] - crop_size + 1)
                crop = arr[i:i + crop_size, j:j + crop_size]
                if rng.random() < 0.5:
                    crop = crop[:, ::-1]
                out[b] = np.moveaxis(crop, -1, 0)
            yield torch.from_numpy(out.copy())

    return batches(), len(images)


def cosine_lr(step: int, total: int, lr0: float, lr_end: float) -> float:
    if total <= 1:
        return lr0
    t = step / (total - 1)
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + math.cos(math.pi * t))


@dataclass
class StageResult:
    checkpoint_path: str
    history: List[dict]
    pipeline: Pipeline
    init_checksums: Optional[dict] = None


def smoothed(values: Sequence[float], window: int = 50) -> List[float]:
    """Trailing moving average used by the smoke-run loss criteria."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _estimate_token_scale(pipeline: Pipeline, data, n_batches: int = 8) -> float:
    stds = []
    with torch.no_grad():
        for _ in range(n_batches):
            batch = next(data)
            stds.append(float(pipeline.extractor.extract(batch).std()))
    return float(np.mean(stds))


def run_stage(config: TrainConfig, init_checkpoint=None) -> StageResult:
    """Run one training stage and write its checkpoint atomically."""
    if config.stage in (2, 3) and init_checkpoint is None:
        raise ConfigurationError(
            f"stage {config.stage} requires the previous stage's checkpoint"
        )
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed + 1)

    init_sums = None
    if init_checkpoint is not None:
        pipeline, prev_stage, _, init_sums = load_checkpoint(init_checkpoint)
        log.info("loaded stage-%d checkpoint %s (%d tensors)",
                 prev_stage, init_checkpoint, len(init_sums))
        for name in sorted(init_sums):
            log.debug("  %s crc32=%08x", name, init_sums[name])
    else:
        pipeline = build_pipeline(codec=config.codec, preedit=config.preedit,
                                  extractor=config.extractor)
    pipeline.train()

    q_levels = pipeline.q_levels
    presets = config.resolved_presets(q_levels)
    if len(presets) != q_levels:
        raise ConfigurationError(
            f"{len(presets)} presets for {q_levels} q levels"
        )

    data, n_images = load_dataset(config.dataset_path, config.crop_size,
                                  config.seed, config.batch_size)
    log.info("stage %d: %d usable images, %d iterations",
             config.stage, n_images, config.iterations)

    codec_params = list(pipeline.codec.parameters())
    preedit_params = list(pipeline.preedit.parameters())
    for p in codec_params:
        p.requires_grad_(config.stage != 2)
    for p in preedit_params:
        p.requires_grad_(config.stage != 1)

    if config.stage == 1:
        groups = [{"params": codec_params, "lr": config.lr_codec}]
    elif config.stage == 2:
        groups = [{"params": preedit_params, "lr": config.lr_preedit}]
    else:
        groups = [
            {"params": codec_params, "lr": config.lr_codec},
            {"params": preedit_params, "lr": config.lr_preedit},
        ]
    optimizer = torch.optim.Adam(groups, betas=ADAM_BETAS)
    base_lrs = [g["lr"] for g in optimizer.param_groups]

    if config.stage >= 2 and float(pipeline.token_scale) == 0.0:
        scale = _estimate_token_scale(pipeline, data)
        pipeline.token_scale.fill_(scale)
        log.info("estimated token scale %.4f", scale)
    token_norm = pipeline.token_norm()

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = config.log_csv or str(out_dir / f"stage{config.stage}_log.csv")
    history: List[dict] = []

    with open(csv_path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(["step", "bpp", "mse", "tk", "rk", "total"])
        for step in range(config.iterations):
            if config.schedule == "cosine":
                for g, lr0 in zip(optimizer.param_groups, base_lrs):
                    g["lr"] = cosine_lr(step, config.iterations, lr0, config.lr_end)
            q = int(rng.integers(q_levels))
            batch = next(data)
            num_pixels = batch.shape[0] * batch.shape[2] * batch.shape[3]

            if config.stage == 1:
                out = pipeline.codec(batch, q)
                loss, terms = total_loss(
                    out["bits_y"] + out["bits_z"], num_pixels, batch,
                    out["x_hat"], presets[q], include_token_terms=False,
                )
            else:
                t_gt = pipeline.extractor.extract(batch)
                edited = pipeline.preedit(batch, t_gt, q)
                out = pipeline.codec(edited, q)
                t_d = pipeline.extractor.extract(out["x_hat"])
                loss, terms = total_loss(
                    out["bits_y"] + out["bits_z"], num_pixels, batch,
                    out["x_hat"], presets[q],
                    tokens_ref=t_gt / token_norm, tokens_dec=t_d / token_norm,
                    include_token_terms=True,
                )

            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            history.append(terms)
            writer.writerow([step, terms["bpp"], terms["mse"], terms["tk"],
                             terms["rk"], terms["total"]])

    pipeline.eval()
    ckpt_path = str(out_dir / f"stage{config.stage}.ckpt")
    save_checkpoint(ckpt_path, pipeline, stage=config.stage,
                    train_config=asdict(config))
    log.info("stage %d done; checkpoint at %s", config.stage, ckpt_path)
    return StageResult(checkpoint_path=ckpt_path, history=history,
                       pipeline=pipeline, init_checksums=init_sums)


@torch.no_grad()
def evaluate(pipeline: Pipeline, images: Sequence[torch.Tensor], q: int,
             preset: LambdaPreset, use_preedit: bool = True) -> dict:
    """Mean eval-mode loss breakdown over full images (round quantization)."""
    pipeline.eval()
    token_norm = pipeline.token_norm()
    sums = {"bpp": 0.0, "mse": 0.0, "tk": 0.0, "rk": 0.0, "total": 0.0}
    for image in images:
        x = image.unsqueeze(0)
        if use_preedit:
            t_gt = pipeline.extractor.extract(x)
            edited = pipeline.preedit(x, t_gt, q)
        else:
            t_gt = pipeline.extractor.extract(x)
            edited = x
        out = pipeline.codec(edited, q, quant="round")
        t_d = pipeline.extractor.extract(out["x_hat"])
        _, terms = total_loss(
            out["bits_y"] + out["bits_z"], x.shape[2] * x.shape[3], x,
            out["x_hat"], preset,
            tokens_ref=t_gt / token_norm, tokens_dec=t_d / token_norm,
            include_token_terms=True,
        )
        for k in sums:
            sums[k] += terms[k]
    return {k: v / len(images) for k, v in sums.items()}


@torch.no_grad()
def mean_bpp(pipeline: Pipeline, images: Sequence[torch.Tensor], q: int,
             use_preedit: bool = True) -> float:
    """Mean actual compressed bits per pixel over a set of images."""
    pipeline.eval()
    total = 0.0
    for image in images:
        bs = pipeline.encode_image(image, q, use_preedit=use_preedit)
        total += 8.0 * bs.total_bytes / (bs.orig_h * bs.orig_w)
    return total / len(images)
