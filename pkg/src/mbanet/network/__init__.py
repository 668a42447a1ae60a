"""Three-branch network assembly, backbones and checkpoint I/O."""

from mbanet.network.backbone import BackboneConfig, build_backbone, build_resnet50_backbone, build_toy_backbone
from mbanet.network.checkpoint import (
    assign_tensors,
    import_resnet50,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
from mbanet.network.model import (
    BRANCH_ORDER,
    BranchHead,
    BranchOutput,
    Network,
    NetworkConfig,
    evaluating,
    forward_embed,
    forward_train,
)

__all__ = [
    "BackboneConfig", "build_backbone", "build_toy_backbone", "build_resnet50_backbone",
    "save_checkpoint", "load_checkpoint", "read_tensors", "write_tensors", "import_resnet50", "assign_tensors",
    "BRANCH_ORDER", "BranchHead", "BranchOutput", "Network", "NetworkConfig", "evaluating",
    "forward_train", "forward_embed",
]
