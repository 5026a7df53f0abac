"""Export torchvision VGG19 convolution weights to safetensors.

Usage: python scripts/export_vgg19.py weights/vgg19.safetensors

The file is read by the `vgg19-54:<path>` perceptual extractor. Only the
`features.<i>.weight` / `features.<i>.bias` tensors are written.
"""
import sys

import torch
from safetensors.torch import save_file
from torchvision.models import VGG19_Weights, vgg19


def main() -> None:
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).eval()
    tensors = {
        f"features.{name}": t.detach().to(torch.float32).contiguous()
        for name, t in model.features.state_dict().items()
    }
    save_file(tensors, sys.argv[1])


if __name__ == "__main__":
    main()
