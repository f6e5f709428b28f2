"""Neural OPC trainer: a learned litho simulator and a learned mask generator.

Two conditional GANs trained in sequence over datasets produced by the OPC
data factory (consumed purely through its on-disk formats):

- **DLS** (litho simulator): mask image -> wafer image.
- **DMG** (mask generator): design image -> mask image, trained jointly
  through the frozen simulator so that the simulated wafer of the generated
  mask matches the SRAF-free design.

Images are 3-channel with fixed semantics (design=R, SRAF=G, mask/wafer=B)
plus one uniform-noise input channel.  See ``damotrainer.cli`` for the
command-line interface.
"""
from .data import (Case, CaseSet, DataFormatError, find_cases, read_grid,
                   read_grid_bin, read_grid_png, write_mask_png)
from .features import FeatureExtractor, make_phi
from .losses import (FreezeContractError, LossWeights, adversarial_value,
                     damo_objective, dls_objective, dmg_objective, log_d,
                     log_one_minus_d, loss_damo, loss_dls, perceptual)
from .models import (ALLOWED_SCALES, Discriminator, DiscriminatorSpec,
                     Generator, GeneratorSpec, ModelConfigError, build_models)
from .train import (DamoTrainer, DlsTrainer, TrainConfig, binary_miou,
                    emit_masks, load_checkpoint, save_checkpoint, train_damo,
                    train_dls)

__version__ = "0.1.0"

__all__ = [
    "ALLOWED_SCALES", "Case", "CaseSet", "DamoTrainer", "DataFormatError",
    "Discriminator", "DiscriminatorSpec", "DlsTrainer", "FeatureExtractor",
    "FreezeContractError", "Generator", "GeneratorSpec", "LossWeights",
    "ModelConfigError", "TrainConfig", "adversarial_value", "binary_miou",
    "build_models", "damo_objective", "dls_objective", "dmg_objective",
    "emit_masks", "find_cases", "load_checkpoint", "log_d", "log_one_minus_d",
    "loss_damo", "loss_dls", "make_phi", "perceptual", "read_grid",
    "read_grid_bin", "read_grid_png", "save_checkpoint", "train_damo",
    "train_dls", "write_mask_png",
]
