"""U-Net reconstruction of vessel shear modulus from displacement images.

Consumes EGRID datasets and their JSON manifest as produced by the
`aortaelast gen-dataset` command; does not depend on that package.
"""

from .dataset import (DatasetError, NormalizationError, NormalizedSample,
                      Sample, SplitDataset, load_manifest, normalize_sample)
from .infer import benchmark_latency, infer, infer_to_egrid
from .model import UNet, architecture_hash, build_model, nmse_loss
from .train import (TrainConfig, TrainingError, evaluate, load_checkpoint,
                    save_checkpoint, train)

__version__ = "0.1.0"
