"""Diabetic-retinopathy screening pipeline: CLAHE, SMOTE, a NumPy CNN and evaluation metrics."""

__version__ = "0.1.0"

from .clahe import ClaheParams, clahe, clahe_image
from .dataset import ClassScheme, Dataset, stratified_split
from .image_core import Image, load_image, save_image
from .metrics import binary_rates, confusion, macro_auc_ovr, multiclass_report, roc_auc
from .smote import SmoteParams, smote

__all__ = [
    "ClaheParams", "clahe", "clahe_image", "ClassScheme", "Dataset", "stratified_split",
    "Image", "load_image", "save_image", "binary_rates", "confusion", "macro_auc_ovr",
    "multiclass_report", "roc_auc", "SmoteParams", "smote",
]
