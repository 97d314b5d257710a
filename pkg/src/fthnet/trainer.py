"""Losses, schedule, augmentation, and the cross-validation harness.

Training is iteration-based: Adam with a linear warmup to the peak
learning rate and linear decay to zero, checkpoint selection by
validation Spearman correlation, test metrics computed only after
selection. Everything is reproducible from (dataset, seed, config).
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import gradcheck, metrics
from .config import LOSS_KINDS, FthnetConfig
from .dataset import load_manifest
from .model import FTHNet, build_model

log = logging.getLogger("fthnet.trainer")

# Random crops are taken from a slightly larger resize of the image;
# 400/384 is the reference ratio.
CROP_SOURCE_RATIO = 400.0 / 384.0


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 0.5e-4
    warmup_iters: int = 1000
    max_iters: int = 120000
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hflip: bool = True
    vflip: bool = True
    random_crop: bool = True
    seed: int = 0
    loss_kind: str | None = None  # falls back to the model config
    eval_every: int = 100
    log_every: int = 100

    def __post_init__(self):
        if self.warmup_iters >= self.max_iters:
            raise ValueError(f"warmup_iters {self.warmup_iters} must be < max_iters {self.max_iters}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_kind is not None and self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")


def desk_train_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: short schedule for synthetic-data runs."""
    kw = dict(max_iters=3000, warmup_iters=100)
    kw.update(overrides)
    return TrainConfig(**kw)


# ---------------------------------------------------------------------------
# losses


def smooth_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """0.5*d^2 when |d| < 1, |d| - 0.5 otherwise; mean over the batch."""
    d = target - pred
    per = torch.where(d.abs() < 1.0, 0.5 * d * d, d.abs() - 0.5)
    return per.mean()


def loss_value(pred: torch.Tensor, target: torch.Tensor, kind: str) -> torch.Tensor:
    d = target - pred
    if kind == "l1":
        return d.abs().mean()
    if kind == "l2":
        return (d * d).mean()
    if kind == "l1+l2":
        return d.abs().mean() + (d * d).mean()
    if kind == "smooth_l1":
        return smooth_l1(pred, target)
    raise ValueError(f"unknown loss kind {kind!r}")


def _sample_loss(kind):
    def sampler(gen):
        pred = torch.rand((6,), generator=gen, dtype=torch.float64) * 4 - 2
        target = torch.rand((6,), generator=gen, dtype=torch.float64) * 4 - 2
        return (pred, target), {}
    return sampler


def _loss_near_kink(args):
    return bool(((args[1] - args[0]).abs() < 1e-3).any())


for _kind in LOSS_KINDS:
    gradcheck.register_kernel(
        f"loss.{_kind}",
        (lambda k: lambda pred, target: loss_value(pred, target, k))(_kind),
        _sample_loss(_kind),
        differentiable=(0,),
        near_kink=_loss_near_kink if _kind in ("l1", "l1+l2") else None,
    )


# ---------------------------------------------------------------------------
# schedule


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr_peak over the warmup, then linear decay to 0."""
    if not 0 <= iteration <= cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    if iteration <= cfg.warmup_iters:
        return cfg.lr_peak * iteration / cfg.warmup_iters
    return cfg.lr_peak * (cfg.max_iters - iteration) / (cfg.max_iters - cfg.warmup_iters)


# ---------------------------------------------------------------------------
# data handling


def _resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.asarray(Image.fromarray(img).resize((w, h), Image.BILINEAR))


def eval_transform(img: np.ndarray, out_size: int) -> np.ndarray:
    """Plain resize to the model input, float32 in [0, 1]."""
    return _resize(img, out_size, out_size).astype(np.float32) / 255.0


def augment(img: np.ndarray, out_size: int, seed: int, hflip: bool = True,
            vflip: bool = True, random_crop: bool = True) -> np.ndarray:
    """Training transform: optional flips, resize, random crop.

    Deterministic given the seed. With all flags off this equals
    ``eval_transform``.
    """
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image {img.shape} too small to augment")
    rng = np.random.default_rng(seed)
    if hflip and rng.random() < 0.5:
        img = img[:, ::-1]
    if vflip and rng.random() < 0.5:
        img = img[::-1, :]
    if not random_crop:
        return eval_transform(np.ascontiguousarray(img), out_size)
    source = int(round(out_size * CROP_SOURCE_RATIO))
    h, w = img.shape[:2]
    scale = source / min(h, w)
    img = _resize(np.ascontiguousarray(img), max(source, int(round(h * scale))),
                  max(source, int(round(w * scale))))
    y0 = int(rng.integers(0, img.shape[0] - out_size + 1))
    x0 = int(rng.integers(0, img.shape[1] - out_size + 1))
    crop = img[y0:y0 + out_size, x0:x0 + out_size]
    return crop.astype(np.float32) / 255.0


@dataclass
class ArrayDataset:
    """In-memory dataset: uint8 images plus their MOS targets."""

    images: list[np.ndarray]
    mos: np.ndarray
    paths: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "ArrayDataset":
        manifest_path = Path(manifest_path)
        base = manifest_path.parent
        records = load_manifest(manifest_path)
        images = [np.asarray(Image.open(base / r.image_path).convert("RGB"))
                  for r in records]
        return cls(images, np.array([r.mos for r in records], dtype=np.float64),
                   [r.image_path for r in records])


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    rounds: list[tuple[list[int], list[int], list[int]]]  # (train, test, val)
    fractions: tuple[float, float, float]
    seed: int

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "fractions": list(self.fractions),
                           "rounds": [[list(a), list(b), list(c)] for a, b, c in self.rounds]})


def make_splits(n_samples: int, seed: int, rounds: int = 10,
                fractions: tuple[float, float, float] = (0.80, 0.15, 0.05)) -> SplitPlan:
    """Ten independent random train/test/val partitions (80/15/5)."""
    if n_samples < 20:
        raise ValueError(f"need at least 20 samples to split, got {n_samples}")
    n_test = round(fractions[1] * n_samples)
    n_val = round(fractions[2] * n_samples)
    n_train = n_samples - n_test - n_val
    if min(n_train, n_test, n_val) < 1:
        raise ValueError(f"degenerate split sizes ({n_train}, {n_test}, {n_val}) for n={n_samples}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(rounds):
        perm = rng.permutation(n_samples)
        out.append((sorted(int(i) for i in perm[:n_train]),
                    sorted(int(i) for i in perm[n_train:n_train + n_test]),
                    sorted(int(i) for i in perm[n_train + n_test:])))
    return SplitPlan(out, fractions, seed)


# ---------------------------------------------------------------------------
# training loop


def _batch_indices(n: int, batch_size: int, seed: int):
    """Endless stream of index batches; each epoch is a fresh permutation."""
    rng = np.random.default_rng(seed)
    buf: list[int] = []
    while True:
        while len(buf) < batch_size:
            buf.extend(int(i) for i in rng.permutation(n))
        yield [buf.pop(0) for _ in range(batch_size)]


def _derive_seed(base: int, iteration: int, slot: int) -> list[int]:
    return [base, iteration, slot]


def _make_batch(data: ArrayDataset, ids: list[int], cfg: TrainConfig,
                input_size: int, iteration: int) -> tuple[torch.Tensor, torch.Tensor]:
    imgs = []
    for slot, idx in enumerate(ids):
        seed = np.random.SeedSequence(_derive_seed(cfg.seed, iteration, slot)).generate_state(1)[0]
        imgs.append(augment(data.images[idx], input_size, int(seed),
                            cfg.hflip, cfg.vflip, cfg.random_crop))
    x = torch.from_numpy(np.stack(imgs))
    y = torch.tensor([data.mos[i] for i in ids], dtype=torch.float32)
    return x, y


def predict_scores(model: FTHNet, data: ArrayDataset, ids: list[int],
                   batch_size: int = 16) -> np.ndarray:
    """Deterministic raw scores on plainly resized images."""
    model.eval()
    size = model.config.input_size
    preds = []
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            x = torch.from_numpy(np.stack([eval_transform(data.images[i], size) for i in chunk]))
            preds.append(model(x).numpy())
    return np.concatenate(preds) if preds else np.array([])


def evaluate_model(model: FTHNet, data: ArrayDataset, ids: list[int],
                   batch_size: int = 16) -> dict:
    preds = predict_scores(model, data, ids, batch_size)
    targets = np.array([data.mos[i] for i in ids])
    return {"rmse": metrics.rmse(preds, targets),
            "plcc": metrics.plcc(preds, targets),
            "srcc": metrics.srcc(preds, targets)}


@dataclass
class TrainResult:
    model: FTHNet
    best_state: dict
    best_val_srcc: float
    best_iteration: int
    history: list[dict]  # {"iter", "loss", "lr"}

    def load_best(self) -> FTHNet:
        self.model.load_state_dict(self.best_state)
        return self.model


def train(model_cfg: FthnetConfig, train_cfg: TrainConfig, data: ArrayDataset,
          train_ids: list[int], val_ids: list[int] | None = None,
          log_file: Path | None = None) -> TrainResult:
    """Train one model; checkpoint selection by validation SRCC.

    Never touches any ids outside train_ids/val_ids. With val_ids=None
    the final weights are the selected ones.
    """
    model = build_model(model_cfg, seed=train_cfg.seed)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr_peak,
                                 betas=(train_cfg.beta1, train_cfg.beta2),
                                 eps=train_cfg.adam_eps)
    kind = train_cfg.loss_kind or model_cfg.loss_kind
    stream = _batch_indices(len(train_ids), train_cfg.batch_size, train_cfg.seed)
    history: list[dict] = []
    best_state = None
    best_srcc = -np.inf
    best_iter = 0
    log_fh = open(log_file, "w", encoding="utf-8") if log_file else None
    try:
        for it in range(1, train_cfg.max_iters + 1):
            lr = lr_at(it, train_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            ids = [train_ids[j] for j in next(stream)]
            x, y = _make_batch(data, ids, train_cfg, model_cfg.input_size, it)
            pred = model(x)
            loss = loss_value(pred, y, kind)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            if it % train_cfg.log_every == 0 or it == train_cfg.max_iters:
                line = f"{it},{loss.item():.6f},{lr:.8g}"
                history.append({"iter": it, "loss": float(loss.item()), "lr": lr})
                log.info(line)
                if log_fh:
                    log_fh.write(line + "\n")
                    log_fh.flush()

            if val_ids and (it % train_cfg.eval_every == 0 or it == train_cfg.max_iters):
                try:
                    val_srcc = evaluate_model(model, data, val_ids,
                                              train_cfg.batch_size)["srcc"]
                except metrics.UndefinedCorrelationError:
                    val_srcc = -np.inf
                model.train()
                if val_srcc > best_srcc:
                    best_srcc = val_srcc
                    best_iter = it
                    best_state = copy.deepcopy(model.state_dict())
    finally:
        if log_fh:
            log_fh.close()
    if best_state is None:
        best_state = copy.deepcopy(model.state_dict())
        best_iter = train_cfg.max_iters
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, best_state, float(best_srcc), best_iter, history)


def train_round(data: ArrayDataset, split: tuple[list[int], list[int], list[int]],
                model_cfg: FthnetConfig, train_cfg: TrainConfig,
                log_file: Path | None = None) -> tuple[TrainResult, dict]:
    """Train on the round's train set, select on val, report test metrics."""
    train_ids, test_ids, val_ids = split
    result = train(model_cfg, train_cfg, data, train_ids, val_ids, log_file)
    test_metrics = evaluate_model(result.model, data, test_ids, train_cfg.batch_size)
    return result, test_metrics


def cross_validate(data: ArrayDataset, plan: SplitPlan, model_cfg: FthnetConfig,
                   train_cfg: TrainConfig, out_dir: Path | None = None) -> metrics.EvalReport:
    """Run every round of the plan and aggregate a report (mean over rounds)."""
    from .checkpoint import save_checkpoint

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.EvalReport()
    for i, split in enumerate(plan.rounds):
        log_file = out_dir / f"round{i}.log" if out_dir else None
        result, test_metrics = train_round(data, split, model_cfg, train_cfg, log_file)
        report.add_round(i, test_metrics["rmse"], test_metrics["plcc"], test_metrics["srcc"])
        log.info("round %d: rmse=%.4f plcc=%.4f srcc=%.4f", i, test_metrics["rmse"],
                 test_metrics["plcc"], test_metrics["srcc"])
        if out_dir is not None:
            save_checkpoint(out_dir / f"round{i}.fthnet", result.model)
    if out_dir is not None:
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return report
