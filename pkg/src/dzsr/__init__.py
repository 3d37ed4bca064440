"""Self-supervised super-resolution from dual-zoom capture pairs."""

from .adastn import (AdaSTN, AdaSTNConfig, AlignmentStack, affine_offsets,
                     deformable_sample, regular_grid)
from .checkpoint import Checkpoint, load_checkpoint, param_hash, save_checkpoint
from .config import TrainConfig, align_mode_for, load_config, save_config
from .data import (DualZoomSample, NoiseSpec, apply_warp, area_downsample,
                   bicubic_upsample, center_crop, color_match, gaussian_blur,
                   inject_noise, make_dualzoom_pair, quantize16, smooth_warp_field)
from .dataset import generate_dataset, read_dataset, read_sample, write_sample
from .degradation import DegradationNet, centroid_loss, degradation_loss, degrade
from .losses import (PerceptualExtractor, SWConfig, perceptual_features,
                     sliced_wasserstein, sr_loss)
from .matching import (FeatureExtractor, MatchConfig, MatchResult, RefAligner,
                       center_paste, inverse_pixel_shuffle,
                       patch_correlation_match, warp_ref_features)
from .metrics import EvalReport, corner_mask, psnr, ssim
from .pipeline import ZoomModel, build_zoom_model, evaluate, infer
from .restoration import ModulationEncoder, ResidualBlock, RestorationNet, restore
from .scenes import synthesize_scene
from .train import train_degradation, train_zooming

__version__ = "0.1.0"
