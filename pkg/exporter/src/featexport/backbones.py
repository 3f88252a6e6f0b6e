"""Backbone registry: networks stripped to their penultimate layer.

Each factory returns a module mapping a (B, 3, H, W) image batch to a
(B, d) feature batch. The feature width of conv4 depends on the input
resolution (the conv map is flattened), so it is measured with a dry run
rather than hard-coded.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision.models import resnet18


class Conv4(nn.Module):
    """Four 3x3 conv blocks (64 channels, batch norm, ReLU, 2x2 max pool);
    features are the flattened final conv map."""

    def __init__(self):
        super().__init__()
        layers = []
        channels = 3
        for _ in range(4):
            layers += [
                nn.Conv2d(channels, 64, kernel_size=3, padding=1),
                nn.BatchNorm2d(64),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            channels = 64
        self.encoder = nn.Sequential(*layers)

    def forward(self, x):
        return torch.flatten(self.encoder(x), start_dim=1)


class _WideBlock(nn.Module):
    """Pre-activation residual block with a widening factor."""

    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)

    def forward(self, x):
        out = torch.relu(self.bn1(x))
        skip = self.shortcut(out) if self.shortcut is not None else x
        out = self.conv1(out)
        out = self.conv2(torch.relu(self.bn2(out)))
        return out + skip


class WideResNet28x10(nn.Module):
    """Standard 28-layer wide residual network, widening factor 10;
    penultimate width 640."""

    def __init__(self):
        super().__init__()
        n = (28 - 4) // 6  # blocks per group
        widths = [16, 160, 320, 640]
        self.conv0 = nn.Conv2d(3, widths[0], 3, stride=1, padding=1, bias=False)
        groups = []
        in_ch = widths[0]
        for width, stride in zip(widths[1:], (1, 2, 2)):
            for b in range(n):
                groups.append(_WideBlock(in_ch, width, stride if b == 0 else 1))
                in_ch = width
        self.blocks = nn.Sequential(*groups)
        self.bn = nn.BatchNorm2d(widths[-1])

    def forward(self, x):
        out = self.blocks(self.conv0(x))
        out = torch.relu(self.bn(out))
        out = nn.functional.adaptive_avg_pool2d(out, 1)
        return torch.flatten(out, start_dim=1)


def _resnet18_features(pretrained: bool):
    weights = "IMAGENET1K_V1" if pretrained else None
    model = resnet18(weights=weights)
    model.fc = nn.Identity()
    return model


_FACTORIES = {
    "conv4": lambda pretrained: Conv4(),
    "resnet18": _resnet18_features,
    "wrn28x10": lambda pretrained: WideResNet28x10(),
}

BACKBONES = tuple(sorted(_FACTORIES))


def build_backbone(name: str, weights: str, device: str = "cpu") -> nn.Module:
    """Instantiate a backbone ready for eval-mode inference.

    weights is "random" (fresh initialization), "torchvision" (download the
    standard pretrained weights, resnet18 only), or a path to a state dict.
    """
    if name not in _FACTORIES:
        raise ValueError(f"unknown backbone {name!r}, expected one of {BACKBONES}")
    if weights == "torchvision":
        if name != "resnet18":
            raise ValueError("torchvision pretrained weights only exist for resnet18")
        model = _FACTORIES[name](True)
    else:
        model = _FACTORIES[name](False)
        if weights != "random":
            state = torch.load(weights, map_location="cpu", weights_only=True)
            if isinstance(state, dict) and "state_dict" in state:
                state = state["state_dict"]
            state = {k.removeprefix("module."): v for k, v in state.items()}
            model.load_state_dict(state)
    model.to(device)
    model.eval()
    return model


def feature_width(model: nn.Module, resize: int, device: str = "cpu") -> int:
    """Measure the penultimate width with a dry forward pass."""
    with torch.no_grad():
        out = model(torch.zeros(1, 3, resize, resize, device=device))
    return int(out.shape[1])
