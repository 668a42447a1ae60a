"""Convert a torchvision ResNet50 into the tensor file read by ``pretrained = PATH``.

Needs torch and torchvision, which the package itself does not depend on.

    python demos/export_torchvision_resnet50.py resnet50.ckpt            # ImageNet weights
    python demos/export_torchvision_resnet50.py resnet50.ckpt --random   # offline smoke test
"""
import argparse

import numpy as np
import torchvision

from mbanet.network import Network, NetworkConfig, import_resnet50, write_tensors

parser = argparse.ArgumentParser()
parser.add_argument("path")
parser.add_argument("--random", action="store_true", help="skip the download, use untrained weights")
args = parser.parse_args()

weights = None if args.random else torchvision.models.ResNet50_Weights.IMAGENET1K_V1
model = torchvision.models.resnet50(weights=weights).eval()
tensors = {}
for name, value in model.state_dict().items():
    arr = value.detach().cpu().numpy()
    tensors[name] = arr.astype(np.int64 if arr.dtype.kind == "i" else np.float32)
write_tensors(args.path, tensors, {"source": "torchvision resnet50", "pretrained": not args.random})
print(f"wrote {len(tensors)} tensors to {args.path}")

# Round trip into the network at a small input size to confirm every name lands.
net = Network(NetworkConfig.resnet50(num_identities=2, input_height=64, input_width=64, head_dim=8))
skipped = import_resnet50(net, args.path)
print("skipped:", sorted(skipped)[:3], f"... ({len(skipped)} total)")
conv1 = model.conv1.weight.detach().numpy()
print("conv1 matches:", np.array_equal(net.backbone.conv1.weight.data, conv1))
