"""BoostLU for partially annotated multi-label classification with CAM networks."""

from .boostlu import BoostParams, boostlu, boostlu_general, boostlu_grad, boostlu_map
from .data import Dataset, SyntheticSpec, generate_dataset, to_single_positive
from .large_loss import LLConfig, LLPolicy, LLState
from .losses import LabelVector, NoiseDecomposition, an_loss, full_loss
from .network import Cam, CamNet, NetConfig, forward_cam, forward_logits, init_net
from .tensor import Tensor
from .train import TrainConfig, train

__version__ = "0.1.0"
