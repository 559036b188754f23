"""Audio super-resolution toolkit.

Spline/Chebyshev signal plumbing, a small numpy autodiff core, the residual
1D U-Net with subpixel upscaling, a spectral DNN baseline, and SNR/LSD
evaluation.
"""

from bwex.audio_io import AudioBuffer, read_wav, write_wav

__version__ = "0.1.0"

__all__ = ["AudioBuffer", "read_wav", "write_wav", "__version__"]
