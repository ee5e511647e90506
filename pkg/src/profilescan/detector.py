"""Binary fake-face classifier: augmentation, training loop, scoring.

Training follows a fixed recipe: ResNet backbone with the final layer
replaced for one logit, Adam with binary cross-entropy, random 224 crops
(center crops for validation/scoring), three independent perturbations
each applied with probability 0.1, learning rate cut by a fixed factor on
validation-loss plateaus, stop once the rate falls below the floor.

Everything is deterministic under the config seed: augmentation draws are
keyed by (seed, epoch, item) and batching is manual (no loader workers).
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import calibrate
from .ingest import CorpusManifest, DatasetRole, ImageRecord, Split

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
BASE_SIZE = 400  # platform profile-image size; inputs are brought here first


class TrainingError(Exception):
    pass


class MissingSplitError(TrainingError):
    def __init__(self, role: DatasetRole, split: Split):
        super().__init__(f"no {split.value} records for role {role.value}")


class TrainingDivergedError(TrainingError):
    pass


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationConfig:
    probability: float = 0.1
    blur_kernel: int = 9
    blur_sigma: tuple[float, float] = (0.5, 5.0)
    jpeg_quality: tuple[int, int] = (30, 100)
    resize_scale: tuple[float, float] = (0.25, 0.75)
    resize_aspect: tuple[float, float] = (0.8, 1.25)

    def to_json(self) -> dict:
        return {
            "probability": self.probability,
            "blur_kernel": self.blur_kernel,
            "blur_sigma": list(self.blur_sigma),
            "jpeg_quality": list(self.jpeg_quality),
            "resize_scale": list(self.resize_scale),
            "resize_aspect": list(self.resize_aspect),
        }

    @classmethod
    def from_json(cls, d: dict) -> "AugmentationConfig":
        return cls(
            probability=d["probability"],
            blur_kernel=d["blur_kernel"],
            blur_sigma=tuple(d["blur_sigma"]),
            jpeg_quality=tuple(d["jpeg_quality"]),
            resize_scale=tuple(d["resize_scale"]),
            resize_aspect=tuple(d["resize_aspect"]),
        )


@dataclass(frozen=True)
class AugmentationPlan:
    """Sampled decisions for one image: which perturbations fire, and how."""

    blur_sigma: Optional[float] = None
    jpeg_quality: Optional[int] = None
    resize: Optional[tuple[float, float]] = None  # (scale, aspect)

    @property
    def identity(self) -> bool:
        return self.blur_sigma is None and self.jpeg_quality is None and self.resize is None


def sample_augmentation_plan(
    config: AugmentationConfig, rng: np.random.Generator
) -> AugmentationPlan:
    """Draw one plan; each perturbation fires independently with p.

    Draw order is fixed (blur, jpeg, resize; parameters drawn only when a
    perturbation fires) so a seeded generator reproduces the plan stream.
    """
    blur_sigma = None
    if rng.random() < config.probability:
        blur_sigma = float(rng.uniform(*config.blur_sigma))
    jpeg_quality = None
    if rng.random() < config.probability:
        jpeg_quality = int(rng.integers(config.jpeg_quality[0], config.jpeg_quality[1] + 1))
    resize = None
    if rng.random() < config.probability:
        scale = float(rng.uniform(*config.resize_scale))
        aspect = float(rng.uniform(*config.resize_aspect))
        resize = (scale, aspect)
    return AugmentationPlan(blur_sigma, jpeg_quality, resize)


def apply_plan(
    image: np.ndarray, plan: AugmentationPlan, config: AugmentationConfig
) -> np.ndarray:
    """Apply a plan to a uint8 HxWx3 image, blur -> jpeg -> resize."""
    out = image
    if plan.blur_sigma is not None:
        radius = (config.blur_kernel - 1) // 2
        out = gaussian_filter(
            out.astype(np.float32),
            sigma=(plan.blur_sigma, plan.blur_sigma, 0),
            radius=(radius, radius, 0),
            mode="nearest",
        )
        out = np.clip(out + 0.5, 0, 255).astype(np.uint8)
    if plan.jpeg_quality is not None:
        buf = io.BytesIO()
        Image.fromarray(out).save(buf, format="JPEG", quality=plan.jpeg_quality)
        buf.seek(0)
        out = np.asarray(Image.open(buf).convert("RGB"))
    if plan.resize is not None:
        scale, aspect = plan.resize
        h, w = out.shape[:2]
        small = Image.fromarray(out).resize(
            (max(1, round(w * scale * aspect)), max(1, round(h * scale))),
            Image.BILINEAR,
        )
        out = np.asarray(small.resize((w, h), Image.BILINEAR))
    return out


def augment(image: np.ndarray, config: AugmentationConfig, rng_seed: int) -> np.ndarray:
    """Seeded one-shot augmentation (plan + application)."""
    rng = np.random.default_rng(rng_seed)
    return apply_plan(image, sample_augmentation_plan(config, rng), config)


# ---------------------------------------------------------------------------
# Configuration and model registry
# ---------------------------------------------------------------------------


class Variant(str, Enum):
    C_RF = "c_rf"                  # unprocessed real/fake, resized to 400
    C_RX_FX = "c_rx_fx"            # platform-processed real/fake
    C_RX_PX_FX = "c_rx_px_fx"      # adds proxy-labeled reals
    CUSTOM = "custom"

    @property
    def roles(self) -> tuple[frozenset, frozenset]:
        table = {
            Variant.C_RF: ({DatasetRole.REAL}, {DatasetRole.FAKE}),
            Variant.C_RX_FX: ({DatasetRole.REAL_PROC}, {DatasetRole.FAKE_PROC}),
            Variant.C_RX_PX_FX: (
                {DatasetRole.REAL_PROC, DatasetRole.PROXY_REAL},
                {DatasetRole.FAKE_PROC},
            ),
        }
        real, fake = table[self]
        return frozenset(real), frozenset(fake)


@dataclass(frozen=True)
class TrainConfig:
    real_roles: frozenset[DatasetRole]
    fake_roles: frozenset[DatasetRole]
    batch_size: int = 32
    learning_rate: float = 1e-4
    lr_decay_factor: float = 10.0
    plateau_delta: float = 0.001
    plateau_patience_epochs: int = 5
    stop_lr: float = 1e-6
    balanced_sampling: bool = False
    crop_size: int = 224
    augmentations: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    backbone: str = "resnet50"  # resnet50 | resnet18 | tiny
    pretrained_weights: Optional[str] = None
    max_epochs: Optional[int] = None  # safety cap; None = lr rule only

    def __post_init__(self):
        if self.stop_lr >= self.learning_rate:
            # Allowed (training stops after the first reduction check) but
            # the usual contract is a strictly smaller floor.
            log.warning("stop_lr %g >= learning rate %g", self.stop_lr, self.learning_rate)
        needs_balance = (
            DatasetRole.REAL_PROC in self.real_roles
            and DatasetRole.PROXY_REAL in self.real_roles
        )
        if needs_balance and not self.balanced_sampling:
            raise ValueError(
                "training on REAL_PROC plus PROXY_REAL requires balanced_sampling"
            )

    def to_json(self) -> dict:
        return {
            "real_roles": sorted(r.value for r in self.real_roles),
            "fake_roles": sorted(r.value for r in self.fake_roles),
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay_factor": self.lr_decay_factor,
            "plateau_delta": self.plateau_delta,
            "plateau_patience_epochs": self.plateau_patience_epochs,
            "stop_lr": self.stop_lr,
            "balanced_sampling": self.balanced_sampling,
            "crop_size": self.crop_size,
            "augmentations": self.augmentations.to_json(),
            "seed": self.seed,
            "backbone": self.backbone,
            "pretrained_weights": self.pretrained_weights,
            "max_epochs": self.max_epochs,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(
            real_roles=frozenset(DatasetRole(r) for r in d["real_roles"]),
            fake_roles=frozenset(DatasetRole(r) for r in d["fake_roles"]),
            batch_size=d["batch_size"],
            learning_rate=d["learning_rate"],
            lr_decay_factor=d["lr_decay_factor"],
            plateau_delta=d["plateau_delta"],
            plateau_patience_epochs=d["plateau_patience_epochs"],
            stop_lr=d["stop_lr"],
            balanced_sampling=d["balanced_sampling"],
            crop_size=d["crop_size"],
            augmentations=AugmentationConfig.from_json(d["augmentations"]),
            seed=d["seed"],
            backbone=d["backbone"],
            pretrained_weights=d.get("pretrained_weights"),
            max_epochs=d.get("max_epochs"),
        )

    @classmethod
    def for_variant(cls, variant: Variant, **overrides) -> "TrainConfig":
        real, fake = variant.roles
        balanced = variant is Variant.C_RX_PX_FX
        return cls(
            real_roles=real,
            fake_roles=fake,
            balanced_sampling=overrides.pop("balanced_sampling", balanced),
            **overrides,
        )


@dataclass(frozen=True)
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
        }


@dataclass
class ModelHandle:
    model_id: str
    variant: Variant
    weights_path: Path
    train_config: TrainConfig
    train_log: list[TrainLogEntry]


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    model_id: str
    score: float
    scored_at: str = ""

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "model_id": self.model_id,
            "score": self.score,
            "scored_at": self.scored_at,
        }


def build_backbone(name: str) -> torch.nn.Module:
    """Classifier network with a single-logit head.

    ResNet variants come from torchvision with the final fully-connected
    layer replaced; weights start from whatever initialization is
    available (random here; a state-dict path can be supplied via
    TrainConfig.pretrained_weights). "tiny" is a small convnet for fast
    loop-mechanics tests.
    """
    if name in ("resnet50", "resnet18"):
        from torchvision import models

        net = getattr(models, name)(weights=None)
        net.fc = torch.nn.Linear(net.fc.in_features, 1)
        return net
    if name == "tiny":
        return torch.nn.Sequential(
            torch.nn.Conv2d(3, 16, 3, stride=2, padding=1),
            torch.nn.ReLU(),
            torch.nn.Conv2d(16, 32, 3, stride=2, padding=1),
            torch.nn.ReLU(),
            torch.nn.AdaptiveAvgPool2d(1),
            torch.nn.Flatten(),
            torch.nn.Linear(32, 1),
        )
    raise ValueError(f"unknown backbone {name!r}")


def _variant_for(config: TrainConfig) -> Variant:
    for variant in (Variant.C_RF, Variant.C_RX_FX, Variant.C_RX_PX_FX):
        real, fake = variant.roles
        if config.real_roles == real and config.fake_roles == fake:
            return variant
    return Variant.CUSTOM


# ---------------------------------------------------------------------------
# Data handling
# ---------------------------------------------------------------------------


def _load_base(image_root: Path, record: ImageRecord) -> np.ndarray:
    img = Image.open(image_root / record.path).convert("RGB")
    if img.size != (BASE_SIZE, BASE_SIZE):
        img = img.resize((BASE_SIZE, BASE_SIZE), Image.BILINEAR)
    return np.asarray(img)


def _to_tensor(crop: np.ndarray) -> torch.Tensor:
    arr = crop.astype(np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    top = (h - size) // 2
    left = (w - size) // 2
    return image[top : top + size, left : left + size]


def _train_example(
    image_root: Path,
    record: ImageRecord,
    config: TrainConfig,
    epoch: int,
    item_index: int,
) -> torch.Tensor:
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0x7FFFFFFF, epoch, item_index])
    )
    image = _load_base(image_root, record)
    plan = sample_augmentation_plan(config.augmentations, rng)
    image = apply_plan(image, plan, config.augmentations)
    h, w = image.shape[:2]
    top = int(rng.integers(0, h - config.crop_size + 1))
    left = int(rng.integers(0, w - config.crop_size + 1))
    return _to_tensor(image[top : top + config.crop_size, left : left + config.crop_size])


def _epoch_items(
    reals: list[ImageRecord],
    fakes: list[ImageRecord],
    config: TrainConfig,
    epoch: int,
) -> list[tuple[ImageRecord, float]]:
    """Training items for one epoch.

    Balanced sampling defines an epoch as one pass over the fake pool with
    an equal-sized draw from the real(+proxy) pool, resampled per epoch
    (with replacement only if the real pool is smaller).
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0x7FFFFFFF, epoch, 0xBA1A])
    )
    if config.balanced_sampling:
        idx = rng.choice(len(reals), size=len(fakes), replace=len(reals) < len(fakes))
        epoch_reals = [reals[i] for i in idx]
    else:
        epoch_reals = list(reals)
    items = [(r, 0.0) for r in epoch_reals] + [(f, 1.0) for f in fakes]
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def _collect(manifest: CorpusManifest, roles, split: Split) -> list[ImageRecord]:
    out = []
    for role in sorted(roles, key=lambda r: r.value):
        records = manifest.select(role, split)
        if not records:
            raise MissingSplitError(role, split)
        out.extend(records)
    return sorted(out, key=lambda r: r.id)


# ---------------------------------------------------------------------------
# Training / scoring
# ---------------------------------------------------------------------------


def train(
    manifest: CorpusManifest,
    config: TrainConfig,
    image_root: Path,
    models_dir: Path,
    model_id: Optional[str] = None,
) -> ModelHandle:
    """Train a classifier on the manifest's TRAIN/VAL splits.

    The learning rate drops by lr_decay_factor whenever the validation
    loss has not improved by plateau_delta for plateau_patience_epochs
    epochs (patience 0 means a reduction check fires every epoch);
    training stops before the first epoch that would run with lr below
    stop_lr. A NaN loss aborts with a diagnostic.
    """
    torch.manual_seed(config.seed)
    reals_train = _collect(manifest, config.real_roles, Split.TRAIN)
    fakes_train = _collect(manifest, config.fake_roles, Split.TRAIN)
    reals_val = _collect(manifest, config.real_roles, Split.VAL)
    fakes_val = _collect(manifest, config.fake_roles, Split.VAL)
    val_items = [(r, 0.0) for r in reals_val] + [(f, 1.0) for f in fakes_val]

    model = build_backbone(config.backbone)
    if config.pretrained_weights:
        state = torch.load(config.pretrained_weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    loss_fn = torch.nn.BCEWithLogitsLoss()
    lr = config.learning_rate
    reductions = 0  # lr is always initial / factor**reductions (no drift)
    opt = torch.optim.Adam(model.parameters(), lr=lr)

    train_log: list[TrainLogEntry] = []
    best_val = float("inf")
    stale = 0
    epoch = 0
    while True:
        if config.max_epochs is not None and epoch >= config.max_epochs:
            log.warning("hit max_epochs=%d before lr floor", config.max_epochs)
            break
        model.train()
        items = _epoch_items(reals_train, fakes_train, config, epoch)
        total_loss, total_n = 0.0, 0
        for start in range(0, len(items), config.batch_size):
            batch = items[start : start + config.batch_size]
            xs = torch.stack(
                [
                    _train_example(image_root, rec, config, epoch, start + i)
                    for i, (rec, _) in enumerate(batch)
                ]
            )
            ys = torch.tensor([[label] for _, label in batch], dtype=torch.float32)
            logits = model(xs)
            loss = loss_fn(logits, ys)
            if torch.isnan(loss):
                raise TrainingDivergedError(
                    f"NaN training loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.detach().item() * len(batch)
            total_n += len(batch)
        train_loss = total_loss / max(1, total_n)

        val_loss = _evaluate_loss(model, val_items, config, image_root, loss_fn)
        if np.isnan(val_loss):
            raise TrainingDivergedError(f"NaN validation loss at epoch {epoch}")
        train_log.append(TrainLogEntry(epoch, train_loss, val_loss, lr))
        log.info(
            "epoch %d train %.4f val %.4f lr %.2e", epoch, train_loss, val_loss, lr
        )

        if best_val - val_loss >= config.plateau_delta:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
        if stale >= config.plateau_patience_epochs:
            reductions += 1
            lr = config.learning_rate / (config.lr_decay_factor ** reductions)
            for group in opt.param_groups:
                group["lr"] = lr
            stale = 0
        epoch += 1
        if lr < config.stop_lr:
            break

    model_id = model_id or f"model-{datetime.now(timezone.utc).strftime('%Y%m%d%H%M%S')}"
    handle = ModelHandle(
        model_id=model_id,
        variant=_variant_for(config),
        weights_path=models_dir / model_id / "weights.bin",
        train_config=config,
        train_log=train_log,
    )
    save_model(handle, model)
    return handle


def _evaluate_loss(model, items, config, image_root, loss_fn) -> float:
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(items), config.batch_size):
            batch = items[start : start + config.batch_size]
            xs = torch.stack(
                [
                    _to_tensor(_center_crop(_load_base(image_root, rec), config.crop_size))
                    for rec, _ in batch
                ]
            )
            ys = torch.tensor([[label] for _, label in batch], dtype=torch.float32)
            total += float(loss_fn(model(xs), ys)) * len(batch)
            n += len(batch)
    return total / max(1, n)


def save_model(handle: ModelHandle, model: torch.nn.Module) -> None:
    model_dir = handle.weights_path.parent
    model_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), handle.weights_path)
    (model_dir / "config.json").write_text(
        json.dumps(
            {
                "model_id": handle.model_id,
                "variant": handle.variant.value,
                "train_config": handle.train_config.to_json(),
            },
            indent=2,
        )
    )
    with open(model_dir / "trainlog.jsonl", "w") as fh:
        for entry in handle.train_log:
            fh.write(json.dumps(entry.to_json()) + "\n")


def init_model(
    config: TrainConfig, models_dir: Path, model_id: str
) -> ModelHandle:
    """Register an untrained (seed-initialized) model; useful for tests."""
    torch.manual_seed(config.seed)
    model = build_backbone(config.backbone)
    handle = ModelHandle(
        model_id=model_id,
        variant=_variant_for(config),
        weights_path=models_dir / model_id / "weights.bin",
        train_config=config,
        train_log=[],
    )
    save_model(handle, model)
    return handle


def load_model(models_dir: Path, model_id: str) -> tuple[ModelHandle, torch.nn.Module]:
    model_dir = models_dir / model_id
    meta = json.loads((model_dir / "config.json").read_text())
    config = TrainConfig.from_json(meta["train_config"])
    train_log = []
    log_path = model_dir / "trainlog.jsonl"
    if log_path.exists():
        for line in log_path.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                train_log.append(
                    TrainLogEntry(d["epoch"], d["train_loss"], d["val_loss"], d["lr"])
                )
    handle = ModelHandle(
        model_id=meta["model_id"],
        variant=Variant(meta["variant"]),
        weights_path=model_dir / "weights.bin",
        train_config=config,
        train_log=train_log,
    )
    model = build_backbone(config.backbone)
    state = torch.load(handle.weights_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return handle, model


def score(
    records: Sequence[ImageRecord],
    handle: ModelHandle,
    model: torch.nn.Module,
    image_root: Path,
    batch_size: int = 32,
) -> tuple[list[ScoreRecord], list[str]]:
    """Score images with a loaded model; returns (scores, skipped_ids).

    Evaluation mode with center-crop preprocessing: identical bytes and
    an identical model give identical scores. Undecodable images are
    skipped and reported, not scored.
    """
    model.eval()
    crop = handle.train_config.crop_size
    scores: list[ScoreRecord] = []
    skipped: list[str] = []
    now = datetime.now(timezone.utc).isoformat()
    batch_records: list[ImageRecord] = []
    batch_tensors: list[torch.Tensor] = []

    def flush():
        if not batch_records:
            return
        with torch.no_grad():
            logits = model(torch.stack(batch_tensors))
            probs = torch.sigmoid(logits)[:, 0]
        for rec, p in zip(batch_records, probs):
            scores.append(ScoreRecord(rec.id, handle.model_id, float(p), now))
        batch_records.clear()
        batch_tensors.clear()

    for record in records:
        try:
            tensor = _to_tensor(_center_crop(_load_base(image_root, record), crop))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", record.id, exc)
            skipped.append(record.id)
            continue
        batch_records.append(record)
        batch_tensors.append(tensor)
        if len(batch_records) >= batch_size:
            flush()
    flush()
    return scores, skipped


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


@dataclass
class AblationTable:
    model_ids: list[str]
    conditions: list[tuple[DatasetRole, DatasetRole]]
    aucs: dict[str, dict[str, Optional[float]]]  # model -> condition label -> auc

    @staticmethod
    def condition_label(real_role: DatasetRole, fake_role: DatasetRole) -> str:
        return f"{real_role.value} vs {fake_role.value}"

    def format(self) -> str:
        labels = [self.condition_label(r, f) for r, f in self.conditions]
        width = max(len(l) for l in labels) + 2
        head = "Condition".ljust(width) + "".join(m.rjust(14) for m in self.model_ids)
        lines = [head]
        for label in labels:
            row = label.ljust(width)
            for m in self.model_ids:
                v = self.aucs[m].get(label)
                row += ("---" if v is None else f"{v:.4f}").rjust(14)
            lines.append(row)
        return "\n".join(lines)


def ablation_report(
    manifest: CorpusManifest,
    score_sets: dict[str, Sequence[ScoreRecord]],
    conditions: Sequence[tuple[DatasetRole, DatasetRole]],
    split: Split = Split.TEST,
) -> AblationTable:
    """AUC matrix of models x (real role vs fake role) conditions.

    Each cell uses the given split of the two roles; a condition whose
    split has no scored images for a model is marked absent and the rest
    of the table still fills in.
    """
    table: dict[str, dict[str, Optional[float]]] = {}
    for model_id, records in score_sets.items():
        by_image = {r.image_id: r.score for r in records}
        row: dict[str, Optional[float]] = {}
        for real_role, fake_role in conditions:
            label = AblationTable.condition_label(real_role, fake_role)
            labeled = []
            for rec in manifest.select(real_role, split):
                if rec.id in by_image:
                    labeled.append(
                        calibrate.LabeledScore(rec.id, by_image[rec.id], calibrate.Label.REAL)
                    )
            for rec in manifest.select(fake_role, split):
                if rec.id in by_image:
                    labeled.append(
                        calibrate.LabeledScore(rec.id, by_image[rec.id], calibrate.Label.FAKE)
                    )
            try:
                row[label] = calibrate.auc(labeled)
            except ValueError:
                row[label] = None
        table[model_id] = row
    return AblationTable(sorted(score_sets), list(conditions), table)
