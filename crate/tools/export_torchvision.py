"""Export torchvision ImageNet EfficientNet backbones to the weight format
read by `effisegnet` (`efficientnet_<variant>.weights` + `.manifest.json`).

Usage:
    python tools/export_torchvision.py --out ~/.cache/effisegnet b4
    python tools/export_torchvision.py --out weights all
    export EFFISEGNET_WEIGHTS_DIR=~/.cache/effisegnet

`--random` exports a randomly initialized backbone instead of downloading
the ImageNet checkpoint (useful offline, for testing the round trip).
"""

import argparse
import datetime
import hashlib
import json
import pathlib
import struct

import torch
import torchvision

VARIANTS = [f"b{i}" for i in range(8)]


def encode(tensors) -> bytes:
    """`tensors`: list of (name, kind, float32 tensor); kind 0 param, 1 buffer."""
    out = bytearray(b"ESNW")
    out += struct.pack("<II", 1, len(tensors))
    for name, kind, t in tensors:
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BB", kind, t.dim())
        out += struct.pack(f"<{t.dim()}Q", *t.shape)
        out += t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
    return bytes(out)


def export(variant: str, out_dir: pathlib.Path, random: bool) -> pathlib.Path:
    builder = getattr(torchvision.models, f"efficientnet_{variant}")
    if random:
        torch.manual_seed(0)
        model, origin = builder(weights=None), "torchvision random init (seed 0)"
    else:
        weights = torchvision.models.get_weight(f"EfficientNet_{variant.upper()}_Weights.IMAGENET1K_V1")
        model, origin = builder(weights=weights), weights.url
    features = model.features
    params = {f"features.{n}" for n, _ in features.named_parameters()}
    tensors = [
        (f"features.{n}", 0 if f"features.{n}" in params else 1, t)
        for n, t in features.state_dict().items()
        if not n.endswith("num_batches_tracked")
    ]
    payload = encode(tensors)
    path = out_dir / f"efficientnet_{variant}.weights"
    path.write_bytes(payload)
    manifest = {
        "variant": variant,
        "origin": origin,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "date": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("variants", nargs="+", help="b0 … b7, or all")
    parser.add_argument("--out", type=pathlib.Path, required=True)
    parser.add_argument("--random", action="store_true", help="skip the download; export a random init")
    args = parser.parse_args()
    variants = VARIANTS if args.variants == ["all"] else args.variants
    args.out.mkdir(parents=True, exist_ok=True)
    for v in variants:
        if v not in VARIANTS:
            parser.error(f"unknown variant {v}")
        print(export(v, args.out, args.random))


if __name__ == "__main__":
    main()
