from .backbone import AttentionGate, FeatureFuseBlock, TaskBranch, Vgg16Trunk, build_trunk
from .gcn import GraphReasoning
from .network import CountingNetwork, build_model

__all__ = [
    "AttentionGate",
    "CountingNetwork",
    "FeatureFuseBlock",
    "GraphReasoning",
    "TaskBranch",
    "Vgg16Trunk",
    "build_model",
    "build_trunk",
]
