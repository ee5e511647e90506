"""Labeling assistance: landmark alignment, eye-distance baseline, inversion.

Generated faces inherit a rigid landmark alignment from their generator's
training data. Two cheap signals exploit that here: the alignment
predicate (every landmark coordinate within k reference standard
deviations of the reference mean) and the eye-position distance baseline.
The heavier signal is generator inversion: optimizing a latent code so the
generator reproduces the target image; in-distribution targets reconstruct
with much lower distance than arbitrary photos.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np
import torch
from PIL import Image, ImageDraw

from .facegate import LANDMARK_NAMES, FaceGeometry


@dataclass(frozen=True)
class AlignmentReference:
    """Per-coordinate mean/std of the 12 landmark values of a reference set.

    Coordinate order is FaceGeometry.as_vector(): left_eye x,y; right_eye
    x,y; left_ear x,y; right_ear x,y; nose x,y; mouth x,y.
    """

    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    k: int = 7
    source_corpus: str = ""

    def __post_init__(self):
        if len(self.mu) != 12 or len(self.sigma) != 12:
            raise ValueError("reference needs exactly 12 mu and 12 sigma values")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma values must be non-negative")

    def to_json(self) -> dict:
        return {
            "mu": list(self.mu),
            "sigma": list(self.sigma),
            "k": self.k,
            "source_corpus": self.source_corpus,
            "coordinate_order": [
                f"{name}_{axis}" for name in LANDMARK_NAMES for axis in ("x", "y")
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "AlignmentReference":
        return cls(
            mu=tuple(d["mu"]),
            sigma=tuple(d["sigma"]),
            k=int(d["k"]),
            source_corpus=d.get("source_corpus", ""),
        )


def save_reference(ref: AlignmentReference, path: Path) -> None:
    path.write_text(json.dumps(ref.to_json(), indent=2))


def load_reference(path: Path) -> AlignmentReference:
    return AlignmentReference.from_json(json.loads(path.read_text()))


def fit_alignment_reference(
    geometries: Sequence[FaceGeometry], k: int = 7, source_corpus: str = ""
) -> AlignmentReference:
    """Sample mean and population standard deviation per coordinate.

    A coordinate that is constant across the reference set gets sigma
    exactly 0.0 (plain np.std leaves ~1e-17 round-off, which would break
    the zero-sigma equality rule of the alignment predicate).
    """
    if not geometries:
        raise ValueError("cannot fit a reference on an empty geometry set")
    matrix = np.array([g.as_vector() for g in geometries], dtype=np.float64)
    constant = matrix.max(axis=0) == matrix.min(axis=0)
    mu = np.where(constant, matrix[0], matrix.mean(axis=0))
    sigma = np.where(constant, 0.0, matrix.std(axis=0, ddof=0))
    return AlignmentReference(
        mu=tuple(float(v) for v in mu),
        sigma=tuple(float(v) for v in sigma),
        k=k,
        source_corpus=source_corpus,
    )


def is_aligned(geometry: FaceGeometry, ref: AlignmentReference) -> bool:
    """True iff |L_i - mu_i| < k * sigma_i for every coordinate i.

    A zero sigma makes the strict inequality unsatisfiable, so that
    coordinate must instead equal the mean exactly.
    """
    for value, mu, sigma in zip(geometry.as_vector(), ref.mu, ref.sigma):
        if sigma == 0.0:
            if value != mu:
                return False
        elif abs(value - mu) >= ref.k * sigma:
            return False
    return True


def eye_deviations(geometry: FaceGeometry, ref: AlignmentReference) -> tuple[float, float]:
    """Per-eye Euclidean distance between actual and expected position."""
    lx, ly = geometry.landmarks["left_eye"]
    rx, ry = geometry.landmarks["right_eye"]
    d_left = math.hypot(lx - ref.mu[0], ly - ref.mu[1])
    d_right = math.hypot(rx - ref.mu[2], ry - ref.mu[3])
    return d_left, d_right


def gan_eye_distance(geometry: FaceGeometry, ref: AlignmentReference) -> float:
    """Mean of the two per-eye deviations from the reference positions.

    Small values (< 0.02 in the source baseline) flag a face whose eyes
    sit exactly where the generator puts them.
    """
    d_left, d_right = eye_deviations(geometry, ref)
    return (d_left + d_right) / 2.0


# ---------------------------------------------------------------------------
# Generator inversion
# ---------------------------------------------------------------------------


class GeneratorAdapter(Protocol):
    latent_dim: int
    differentiable: bool
    resolution: int

    def generate(self, latent: torch.Tensor) -> torch.Tensor:
        """(B, latent_dim) -> (B, 3, resolution, resolution), values in [0,1]."""
        ...


class ToyGenerator:
    """Small seeded convolutional generator for tests and demos.

    Three transposed-conv stages map a latent vector to a 32x32 RGB image;
    a tanh squashed to [0,1] keeps outputs valid while staying smooth, so
    latent recovery by gradient descent is easy for in-range targets.
    Weights are fixed by the seed and never trained.
    """

    def __init__(self, latent_dim: int = 16, seed: int = 7):
        self.latent_dim = latent_dim
        self.differentiable = True
        self.resolution = 32
        gen = torch.Generator().manual_seed(seed)
        self._net = torch.nn.Sequential(
            torch.nn.Linear(latent_dim, 32 * 4 * 4),
            torch.nn.Unflatten(1, (32, 4, 4)),
            torch.nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1),
            torch.nn.ConvTranspose2d(16, 8, 4, stride=2, padding=1),
            torch.nn.ConvTranspose2d(8, 3, 4, stride=2, padding=1),
        )
        with torch.no_grad():
            for p in self._net.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.2)
        for p in self._net.parameters():
            p.requires_grad_(False)

    def generate(self, latent: torch.Tensor) -> torch.Tensor:
        return 0.5 + 0.5 * torch.tanh(self._net(latent))


PerceptualMetric = Callable[[np.ndarray, np.ndarray], float]


def mse_metric(a: np.ndarray, b: np.ndarray) -> float:
    """Plain mean squared error over float images in [0,1].

    Stand-in for a learned perceptual distance; the inversion machinery
    takes any (image, image) -> float callable, so a real LPIPS network
    can be plugged in where its weights are available.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass
class InversionResult:
    image_id: str
    latent: list[float]
    reconstruction: np.ndarray  # uint8 HxWx3
    lpips: float
    mse: float
    steps: int
    diverged: bool = False

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "latent": self.latent,
            "lpips": self.lpips,
            "mse": self.mse,
            "steps": self.steps,
            "diverged": self.diverged,
        }


def _to_unit_image(image: Union[Path, Image.Image, np.ndarray], resolution: int) -> np.ndarray:
    if isinstance(image, (str, Path)):
        image = Image.open(image)
    if isinstance(image, Image.Image):
        image = image.convert("RGB")
        if image.size != (resolution, resolution):
            image = image.resize((resolution, resolution), Image.BILINEAR)
        return np.asarray(image, dtype=np.float64) / 255.0
    arr = np.asarray(image, dtype=np.float64)
    if arr.max() > 1.0:
        arr = arr / 255.0
    if arr.shape[0] != resolution or arr.shape[1] != resolution:
        pil = Image.fromarray((arr * 255).astype(np.uint8))
        arr = np.asarray(pil.resize((resolution, resolution), Image.BILINEAR)) / 255.0
    return arr


def invert(
    image: Union[Path, Image.Image, np.ndarray],
    generator: GeneratorAdapter,
    budget: int = 1000,
    image_id: str = "",
    metric: Optional[PerceptualMetric] = None,
    rng_seed: int = 0,
    base_lr: float = 0.05,
) -> InversionResult:
    """Find the latent code whose generation best reconstructs the image.

    Adam on the latent with a short warmup, cosine step-size decay, and
    additive latent noise annealed to zero over the first three quarters of
    the budget. Tracks the best latent seen; a NaN loss stops early and
    returns the best intermediate flagged as diverged.
    """
    if not generator.differentiable:
        raise ValueError("generator adapter is not differentiable; cannot invert")
    metric = metric or mse_metric
    target_np = _to_unit_image(image, generator.resolution)
    target = torch.tensor(target_np.transpose(2, 0, 1)[None], dtype=torch.float32)

    torch_gen = torch.Generator().manual_seed(rng_seed)
    z = torch.randn((1, generator.latent_dim), generator=torch_gen) * 0.1
    z.requires_grad_(True)
    opt = torch.optim.Adam([z], lr=base_lr)

    best_loss = math.inf
    best_z = z.detach().clone()
    diverged = False
    steps_done = 0
    warmup = max(1, budget // 20)
    noise_ramp = max(1, int(budget * 0.75))
    for step in range(budget):
        t = step / max(1, budget - 1)
        lr = base_lr * min(1.0, (step + 1) / warmup) * (0.5 + 0.5 * math.cos(math.pi * t))
        for group in opt.param_groups:
            group["lr"] = lr
        noise_strength = 0.05 * max(0.0, 1.0 - step / noise_ramp)
        noise = torch.randn(z.shape, generator=torch_gen) * noise_strength
        out = generator.generate(z + noise)
        loss = torch.mean((out - target) ** 2)
        if torch.isnan(loss):
            diverged = True
            break
        loss_value = loss.detach().item()
        if loss_value < best_loss:
            best_loss = loss_value
            best_z = z.detach().clone()
        opt.zero_grad()
        loss.backward()
        opt.step()
        steps_done = step + 1

    with torch.no_grad():
        recon = generator.generate(best_z)[0].clamp(0, 1).numpy().transpose(1, 2, 0)
    recon_u8 = (recon * 255.0 + 0.5).astype(np.uint8)
    recon_unit = recon_u8.astype(np.float64) / 255.0
    return InversionResult(
        image_id=image_id,
        latent=[float(v) for v in best_z[0]],
        reconstruction=recon_u8,
        lpips=metric(target_np, recon_unit),
        mse=mse_metric(target_np, recon_unit),
        steps=steps_done,
        diverged=diverged,
    )


CAPTION_HEIGHT = 28


def composite(
    image: Union[Path, Image.Image, np.ndarray],
    result: InversionResult,
) -> Image.Image:
    """Side-by-side original (left) and reconstruction (right) with caption.

    The caption band renders the perceptual and MSE distances; the output
    is what the labeling console shows for aligned, inverted images.
    """
    if isinstance(image, (str, Path)):
        original = Image.open(image).convert("RGB")
    elif isinstance(image, np.ndarray):
        original = Image.fromarray(image.astype(np.uint8)).convert("RGB")
    else:
        original = image.convert("RGB")
    recon = Image.fromarray(result.reconstruction).convert("RGB")
    if recon.size != original.size:
        recon = recon.resize(original.size, Image.BILINEAR)
    w, h = original.size
    canvas = Image.new("RGB", (2 * w, h + CAPTION_HEIGHT), "white")
    canvas.paste(original, (0, 0))
    canvas.paste(recon, (w, 0))
    draw = ImageDraw.Draw(canvas)
    caption = f"LPIPS {result.lpips:.4f}   MSE {result.mse:.6f}"
    draw.text((6, h + 7), caption, fill="black")
    return canvas
