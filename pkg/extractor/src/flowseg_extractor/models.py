"""Model loading and the last-decoder-block hook point."""
from typing import Tuple

import torch
from torch import nn

from .spec import TINY_RANDOM


class ModelLoadError(RuntimeError):
    pass


class TinyUNet(nn.Module):
    """Small encoder-decoder CNN with deterministically seeded weights.

    Stands in for the diffusion U-Net so extraction runs offline. The hook
    point mirrors the real path: the output of the last decoder block,
    before the final projection. Spatial resolution at the hook is input/2.
    """

    HOOK_POINT = "dec1 (last decoder block output, stride 1/2)"

    def __init__(self, seed: int = 0, width: int = 16):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.enc1 = nn.Conv2d(3, width // 2, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.dec1 = nn.ConvTranspose2d(width, width, 4, stride=2, padding=1)
        self.out_proj = nn.Conv2d(width, 3, 3, padding=1)
        self.act = nn.SiLU()
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.empty_like(p).normal_(std=0.2, generator=gen))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.enc1(x))
        h = self.act(self.enc2(h))
        h = self.act(self.dec1(h))
        self.last_decoder_features = h
        return self.out_proj(h)

    def run_denoise_step(self, noisy: torch.Tensor,
                         timestep: int) -> torch.Tensor:
        # the tiny model has no timestep conditioning beyond a scalar bias
        self.forward(noisy + timestep * 1e-4)
        return self.last_decoder_features


class DiffusionUNetWrapper:
    """Real diffusion U-Net behind the same two-method surface."""

    def __init__(self, model_id: str, prompt: str, device: str):
        try:
            from diffusers import StableDiffusionXLPipeline
        except ImportError as exc:
            raise ModelLoadError(
                "diffusers is not installed; install "
                "flowseg-extractor[diffusion] or use --model-id tiny-random"
            ) from exc
        try:
            pipe = StableDiffusionXLPipeline.from_pretrained(model_id)
        except Exception as exc:  # noqa: BLE001 - any load failure is fatal
            raise ModelLoadError(
                f"could not load {model_id!r}: {exc}") from exc
        self.pipe = pipe.to(device)
        self.prompt = prompt
        self.device = device
        self.features = None
        blocks = self.pipe.unet.up_blocks
        self.HOOK_POINT = f"unet.up_blocks[{len(blocks) - 1}] output"
        blocks[-1].register_forward_hook(self._capture)

    def _capture(self, module, args, output):
        self.features = output

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            latent = self.pipe.vae.encode(image.to(self.device))
            return latent.latent_dist.mean * self.pipe.vae.config.scaling_factor

    def run_denoise_step(self, noisy: torch.Tensor,
                         timestep: int) -> torch.Tensor:
        with torch.no_grad():
            embeds = self.pipe.encode_prompt(self.prompt, device=self.device,
                                             num_images_per_prompt=1,
                                             do_classifier_free_guidance=False)
            t = torch.tensor([timestep], device=self.device)
            self.pipe.unet(noisy, t, encoder_hidden_states=embeds[0])
        return self.features


def load_model(model_id: str, prompt: str, device: str,
               weight_seed: int = 0) -> Tuple[object, str]:
    """Return (model, hook_point_description)."""
    if model_id == TINY_RANDOM:
        model = TinyUNet(seed=weight_seed)
        model.eval()
        return model, TinyUNet.HOOK_POINT
    wrapper = DiffusionUNetWrapper(model_id, prompt, device)
    return wrapper, wrapper.HOOK_POINT
