"""Physics-based underwater image restoration, contrastive loss kernels,
image quality metrics and dataset tooling."""

from .imaging import (
    RestoreParams,
    SceneGeometry,
    airlight,
    degrade,
    rescale_channels,
    restore,
    restore_with_geometry,
    synthesize,
    transmission,
)
from .losses import (
    FeatureStack,
    LossWeights,
    full_objective,
    identity_l1,
    infonce,
    lsgan_d_loss,
    lsgan_g_loss,
    lsgan_loss,
    patchnce,
)
from .metrics import mse, psnr, ssim, uiqm, uiqm_components
from .spectral import (
    ChannelAttenuation,
    CurveKind,
    IntegrationBounds,
    SpectralCurve,
    channel_attenuations,
    resample,
    total_attenuation,
)

__version__ = "0.1.0"
