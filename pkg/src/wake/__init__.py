"""wake: a desk-scale driving world-action model.

A query-bottleneck transformer backbone with a depth -> video -> action
causal attention mask feeds three flow-matching generative experts, trained
end-to-end against a procedural 2D micro-world with exact depth ground
truth and scored with closed-loop planning metrics.
"""

from .backbone import Backbone, BackboneConfig, QueryLayout, WorldEmbeddings, build_group_mask
from .config import RunConfig, load_config
from .episodes import EpisodeRecord, WorldConfig, build_dataset, read_episode_file, write_episode_file
from .flowmatch import FlowSample, SamplerConfig, fm_loss, interpolate, sample
from .metrics import depth_metrics, evaluate_split, pdms, plan_subscores, psnr
from .microworld import CameraConfig, Scene, expert_policy, generate_scene, render, step
from .model import ModelConfig, WorldActionModel
from .tensor import AttentionMask, ParamStore, Tensor, backward, check_gradients, masked_attention
from .trainer import LossReport, load_checkpoint, run_ablation_matrix, save_checkpoint, train
from .trajectory import Trajectory, TrajectoryState, decode_heading, encode_heading

__version__ = "0.1.0"
