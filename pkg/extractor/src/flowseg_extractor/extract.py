"""Image -> (H, W, C) float32 NPY tensors via the model's decoder features."""
import json
from pathlib import Path
from typing import List, Union

import numpy as np
import torch
from PIL import Image

from .models import TinyUNet, load_model
from .spec import ExtractionSpec

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}


class ImageReadError(RuntimeError):
    pass


def _load_image(path: Path, resize) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((resize[1], resize[0]),
                                          Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 127.5 - 1.0
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def _add_noise(latent: torch.Tensor, spec: ExtractionSpec) -> torch.Tensor:
    # forward-process noising at the chosen timestep with a cosine-ish
    # signal level; seeded generator makes the run reproducible
    if spec.noise_seed is None:
        noise = torch.randn(latent.shape)
    else:
        gen = torch.Generator().manual_seed(spec.noise_seed)
        noise = torch.randn(latent.shape, generator=gen)
    signal = max(0.0, 1.0 - spec.timestep / 1000.0)
    return signal ** 0.5 * latent + (1.0 - signal) ** 0.5 * noise


def _image_paths(target: Path) -> List[Path]:
    if target.is_dir():
        paths = sorted(p for p in target.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise ImageReadError(f"no images found in {target}")
        return paths
    if not target.exists():
        raise ImageReadError(f"no such file: {target}")
    return [target]


def extract(target: Union[str, Path], spec: ExtractionSpec,
            out_dir: Union[str, Path]) -> List[Path]:
    """Extract features for one image or a directory of images.

    Writes <stem>.npy per image plus extract.manifest.json; returns the
    written tensor paths.
    """
    target = Path(target)
    out_dir = Path(out_dir)
    paths = _image_paths(target)
    model, hook_point = load_model(spec.model_id, spec.prompt, spec.device)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    with torch.no_grad():
        for path in paths:
            image = _load_image(path, spec.resize)
            if isinstance(model, TinyUNet):
                latent = image
            else:
                latent = model.encode(image)
            noisy = _add_noise(latent, spec)
            feats = model.run_denoise_step(noisy, spec.timestep)
            tensor = feats[0].permute(1, 2, 0).contiguous()
            arr = tensor.cpu().numpy().astype("<f4")
            if not np.isfinite(arr).all():
                raise RuntimeError(f"non-finite features for {path}")
            out_path = out_dir / f"{path.stem}.npy"
            np.save(out_path, arr)
            written.append(out_path)

    manifest = spec.manifest(hook_point)
    manifest["images"] = [p.name for p in paths]
    manifest["outputs"] = [p.name for p in written]
    manifest_path = out_dir / "extract.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    return written
