"""Fast simulation of a segmented quartz-fiber calorimeter.

A binary classifier gates incoming particles; conditional generative
models (VAE and DC-GAN with an auxiliary coordinate regressor) synthesize
44x44 photon-count responses for the rest. Fidelity is measured as the
Wasserstein distance between per-channel distributions, which also drives
the postprocessing calibration.
"""

from .calibration import (CalibrationResult, apply_postprocessing, calibrate,
                          calibrate_multiplier, calibrate_sigma)
from .dataio import (NormStats, SampleSet, WeightsBundle, load_dataset,
                     load_weights, save_dataset, save_weights)
from .detector import (CHANNEL_NAMES, GRID_SIZE, N_CHANNELS, N_PIXELS,
                       ParticleRecord, argmax_coords, channel_masks,
                       extract_channels)
from .errors import ShapeError, ValidationError
from .metrics import (ChannelReport, ClassificationReport, channel_wasserstein,
                      classification_report, histogram_csv, wasserstein1d)
from .models import (AuxRegressorNet, ClassifierNet, DecoderNet, DiscriminatorNet,
                     EncoderNet, GanModel, GeneratorNet, VaeModel, build_classifier,
                     build_gan, build_model, build_regressor, build_vae)
from .oracle import (OracleConfig, generate_dataset, oracle_is_zero,
                     oracle_response, sample_particle)
from .pipeline import (ModelSampler, ReplaySampler, benchmark, evaluate,
                       load_model, run_ablation, simulate)
from .training import (TrainConfig, TrainLog, encode_conditions,
                       denormalize_responses, normalize_responses,
                       pretrain_regressor, train_classifier, train_gan, train_vae)

__version__ = "0.1.0"
