"""Topological graph memory navigation library."""

from .builder import Detection, GraphBuilder, GraphDelta, Observation
from .encoders import EncoderConfig, OracleEncoder, cosine_similarity
from .graph import ImageNode, ObjectState, TopoGraph
from .mixer import CrossGraphMixer, MixerConfig
from .policy import PolicyConfig, PolicyNetwork, sample_action
from .training import TrainConfig, bc_loss, compute_reward, finite_diff_grad, ppo_loss

__all__ = [
    "Detection", "GraphBuilder", "GraphDelta", "Observation",
    "EncoderConfig", "OracleEncoder", "cosine_similarity",
    "ImageNode", "ObjectState", "TopoGraph",
    "CrossGraphMixer", "MixerConfig",
    "PolicyConfig", "PolicyNetwork", "sample_action",
    "TrainConfig", "bc_loss", "compute_reward", "finite_diff_grad", "ppo_loss",
]

__version__ = "0.1.0"
