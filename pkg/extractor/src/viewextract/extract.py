"""Convert labelled images into the multi-view CSV+JSON feature container.

Two view layouts:
  backbones - one view per CNN (different extractors see the whole image)
  crops     - four corner rectangles of one image, one common CNN

Either way the output directory holds one headerless CSV per view (row i
of every file is image i), a labels file with one class id per line, and
a manifest JSON that the consuming pipeline validates on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbones import build_backbone, embed
from .errors import BadPlan, UnreadableImage

FLOAT_FMT = "%.17g"
DEFAULT_BACKBONES = ("resnet18", "mobilenet", "wide-resnet")


def corner_crops(frac: float = 2.0 / 3.0):
    """Four corner rectangles covering the image jointly; side `frac` of
    the image, so neighbouring crops overlap by 2*frac - 1."""
    if not 0.5 <= frac <= 1.0:
        raise BadPlan(f"crop fraction {frac} must lie in [0.5, 1] to cover the image")
    lo = 1.0 - frac
    return (
        (0.0, 0.0, frac, frac),
        (lo, 0.0, 1.0, frac),
        (0.0, lo, frac, 1.0),
        (lo, lo, 1.0, 1.0),
    )


@dataclass
class ExtractionPlan:
    """What to extract: mode, view layout, image list, destination."""

    mode: str  # "backbones" | "crops"
    images: tuple  # (path, class_id) pairs, output row order
    out_dir: str
    backbones: tuple = DEFAULT_BACKBONES
    crop_backbone: str = "resnet18"
    crop_frac: float = 2.0 / 3.0
    image_size: int = 84
    weights_dir: str | None = None
    role: str = "novel"
    crops: tuple = field(init=False)

    def __post_init__(self):
        if self.mode not in ("backbones", "crops"):
            raise BadPlan(f"mode must be 'backbones' or 'crops', got '{self.mode}'")
        if not self.images:
            raise BadPlan("no images listed")
        if self.mode == "backbones" and not self.backbones:
            raise BadPlan("backbones mode needs at least one backbone")
        self.crops = corner_crops(self.crop_frac)

    @property
    def n_views(self) -> int:
        return len(self.backbones) if self.mode == "backbones" else len(self.crops)


def read_image_list(labels_file) -> tuple:
    """Parse 'relative/path.png,class_id' lines; order defines row order."""
    path = Path(labels_file)
    if not path.exists():
        raise BadPlan(f"labels file not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            name, cls = line.rsplit(",", 1)
            pairs.append((name.strip(), int(cls)))
        except ValueError as e:
            raise BadPlan(f"{path}:{lineno}: expected 'path,class_id', got '{line}'") from e
    if not pairs:
        raise BadPlan(f"labels file {path} lists no images")
    return tuple(pairs)


def _load_rgb(path: Path, size: int) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((size, size), Image.BILINEAR)
    except (OSError, SyntaxError, ValueError) as e:
        raise UnreadableImage(f"cannot read {path}: {e}") from e
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def _crop(batch: torch.Tensor, box, size: int) -> torch.Tensor:
    _, _, h, w = batch.shape
    x0, y0, x1, y1 = box
    region = batch[:, :, int(round(y0 * h)): int(round(y1 * h)),
                   int(round(x0 * w)): int(round(x1 * w))]
    return torch.nn.functional.interpolate(
        region, size=(size, size), mode="bilinear", align_corners=False
    )


def extract(plan: ExtractionPlan, images_dir) -> Path:
    """Run the plan; returns the manifest path of the written container."""
    root = Path(images_dir)
    batch = torch.stack([_load_rgb(root / name, plan.image_size) for name, _ in plan.images])
    labels = np.array([cls for _, cls in plan.images], dtype=np.int64)

    views = []
    if plan.mode == "backbones":
        for name in plan.backbones:
            module, _ = build_backbone(name, plan.weights_dir)
            views.append(embed(module, batch).numpy().astype(np.float64))
        view_tags = list(plan.backbones)
    else:
        module, _ = build_backbone(plan.crop_backbone, plan.weights_dir)
        for box in plan.crops:
            views.append(embed(module, _crop(batch, box, plan.image_size)).numpy().astype(np.float64))
        view_tags = [f"crop{i}" for i in range(len(plan.crops))]

    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for v, x in enumerate(views):
        name = f"view_{v}.csv"
        np.savetxt(out / name, x, fmt=FLOAT_FMT, delimiter=",")
        entries.append({"path": name, "dim": int(x.shape[1])})
    np.savetxt(out / "labels.csv", labels, fmt="%d")

    manifest = {
        "views": entries,
        "labels_path": "labels.csv",
        "classes": sorted(int(c) for c in set(labels.tolist())),
        "role": plan.role,
        "extraction": {
            "mode": plan.mode,
            "view_tags": view_tags,
            "image_size": plan.image_size,
            "crop_frac": plan.crop_frac if plan.mode == "crops" else None,
            "crops": plan.crops if plan.mode == "crops" else None,
            "weights_dir": plan.weights_dir,
            "n_images": len(plan.images),
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
