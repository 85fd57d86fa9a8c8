"""Few-shot meta-learning indoor localization over CSI fingerprint images."""

__version__ = "0.1.0"

from .csi_data import (
    CSIImage,
    ChannelNormalizer,
    ChannelResponse,
    FingerprintDataset,
    FingerprintRecord,
    RefPoint,
    TaskKey,
    build_csi_image,
    image_to_responses,
    read_dataset,
    write_dataset,
)

__all__ = [
    "CSIImage",
    "ChannelNormalizer",
    "ChannelResponse",
    "FingerprintDataset",
    "FingerprintRecord",
    "RefPoint",
    "TaskKey",
    "build_csi_image",
    "image_to_responses",
    "read_dataset",
    "write_dataset",
    "__version__",
]
