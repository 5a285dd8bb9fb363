"""Unsupervised low-dose CT denoising with an exactly invertible generator,
a single patch discriminator, and wavelet-residual-domain training."""

from .tensor import Tensor, Tape, adam_step, conv2d, leaky_relu, batch_norm
from .wavelet import WaveletPyramid, dwt2, idwt2, wavelet_residual
from .invertible import (Generator, InvertibleBlock, InvConv1x1, CouplingNet,
                         generator_forward, generator_inverse, lipschitz_bound,
                         spectral_normalize, squeeze, unsqueeze)
from .discriminator import Discriminator, discriminate, lsgan_d_loss, lsgan_g_loss
from .training import (TrainConfig, train_step, identity_loss, denoise,
                       synthesize_noise, cycle_loss_probe, lr_schedule, run_training)
from .metrics import psnr, ssim, MetricReport
from .ctsim import (DataConfig, Phantom, SinogramSet, make_phantom, radon,
                    dose_noise, fbp, build_dataset)

__version__ = "0.1.0"
