"""Dataset ingestion, image codecs, checkpoints and CSV export."""

from .checkpoint import (
    load_checkpoint,
    load_tensors,
    save_checkpoint,
    save_tensors,
)
from .dataset import (
    DatasetManifest,
    ImageRecord,
    class_dirs,
    list_images,
    load_dataset,
    read_csv,
    stack_images,
    stratified_assign,
    stratified_split,
    write_csv,
)
from .images import (
    decode_image,
    decode_png,
    decode_ppm,
    denormalize,
    encode_image,
    encode_png,
    encode_ppm,
    normalize,
    resize_bilinear,
)

__all__ = [
    "load_checkpoint", "load_tensors", "save_checkpoint", "save_tensors",
    "DatasetManifest", "ImageRecord", "class_dirs", "list_images", "load_dataset",
    "read_csv", "stack_images", "stratified_assign", "stratified_split", "write_csv",
    "decode_image", "decode_png", "decode_ppm", "denormalize", "encode_image",
    "encode_png", "encode_ppm", "normalize", "resize_bilinear",
]
