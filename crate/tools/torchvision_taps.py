"""Freeze torchvision EfficientNet stage activations as a test fixture.

Every tensor of the torchvision backbone is filled with a closed-form value
derived from its state-dict name and flat index (see `fill`), the network is
run in float64 eval mode on a closed-form input, and statistics of the five
stage outputs (the last block at each resolution) are written to JSON.
The Rust test `torchvision_oracle.rs` rebuilds the same weights by name and
compares.

Usage: python tools/torchvision_taps.py crates/core/tests/fixtures/torchvision_taps.json
"""

import json
import math
import sys

import torch
import torchvision

RESOLUTION = 64
VARIANTS = ["b0", "b5"]


def name_offset(name: str) -> float:
    return (sum(name.encode()) % 1000) * 1e-3


def fill(name: str, shape) -> torch.Tensor:
    n = math.prod(shape)
    idx = torch.arange(n, dtype=torch.float64)
    s = torch.sin(0.37 * idx + name_offset(name))
    if len(shape) == 4:
        fan_in = n // shape[0]
        v = s / math.sqrt(fan_in)
    elif name.endswith("running_var"):
        v = 1.0 + 0.5 * s.abs()
    elif name.endswith("weight"):
        v = 1.0 + 0.1 * s
    else:
        v = 0.1 * s
    return v.reshape(shape)


def closed_form_input() -> torch.Tensor:
    c = torch.arange(3, dtype=torch.float64).view(3, 1, 1)
    y = torch.arange(RESOLUTION, dtype=torch.float64).view(1, -1, 1)
    x = torch.arange(RESOLUTION, dtype=torch.float64).view(1, 1, -1)
    return torch.sin(0.05 * (31 * c + 7 * y + 3 * x)).unsqueeze(0)


def stats(t: torch.Tensor) -> dict:
    flat = t.flatten()
    step = max(1, flat.numel() // 16)
    return {
        "shape": list(t.shape),
        "sum": flat.sum().item(),
        "abs_sum": flat.abs().sum().item(),
        "sq_sum": (flat * flat).sum().item(),
        "stride": step,
        "samples": flat[::step][:16].tolist(),
    }


def run(variant: str) -> dict:
    model = getattr(torchvision.models, f"efficientnet_{variant}")(weights=None).double().eval()
    backbone = model.features
    with torch.no_grad():
        for name, t in backbone.state_dict().items():
            if name.endswith("num_batches_tracked"):
                continue
            t.copy_(fill(f"features.{name}", tuple(t.shape)))
        outs = []
        h = closed_form_input()
        for block in backbone[:-1]:
            h = block(h)
            outs.append(h)
    # Stage taps: the last block before each downsampling, plus the final block.
    taps = [o for i, o in enumerate(outs[1:], 1) if i + 1 == len(outs) or outs[i + 1].shape[-1] != o.shape[-1]]
    return {"resolution": RESOLUTION, "taps": [stats(t) for t in taps]}


def main() -> None:
    out = {v: run(v) for v in VARIANTS}
    out["generator"] = f"torch {torch.__version__}, torchvision {torchvision.__version__}, float64"
    with open(sys.argv[1], "w") as f:
        json.dump(out, f, indent=1)


if __name__ == "__main__":
    main()
