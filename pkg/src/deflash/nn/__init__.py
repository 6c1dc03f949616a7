from .functional import *  # noqa: F401,F403
from .network import (LayerSpec, Network, NetworkSpec, build_network, images_to_tensor,  # noqa: F401
                      tensor_to_images, truncated_normal, xavier_bound)
from .checkpoint import (Checkpoint, CheckpointError, import_encoder_weights, load_checkpoint,  # noqa: F401
                         read_tensors, save_checkpoint, write_tensors)
