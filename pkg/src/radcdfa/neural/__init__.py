from .autodiff import GraphStateError, Segments, ShapeError, Tensor, backward, no_grad
from .nets import Agent, AgentSpec, ConvEncoder, GATv2Encoder, GraphBatch, Linear, MLP
from .params import ParamStore, RMSprop

__all__ = [
    "Agent", "AgentSpec", "ConvEncoder", "GATv2Encoder", "GraphBatch", "GraphStateError",
    "Linear", "MLP", "ParamStore", "RMSprop", "Segments", "ShapeError", "Tensor",
    "backward", "no_grad",
]
