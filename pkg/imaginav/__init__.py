from ._version import __version__
from .core.geometry import Action, PlatformLimits, Pose
from .core.planner import Planner, PlannerConfig, run_episode
from .core.scene import Episode, Scene, SensorConfig, generate_episode, generate_scene
from .core.value import CueWeights, FusionParams
from .core.world_model import NoiseConfig, NoisyOracleWorldModel, OracleWorldModel
