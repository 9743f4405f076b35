"""Frame-level phoneme recognition with shallow CNN features and a
hierarchical tree of SVMs."""
from .cnn import ShallowCNN
from .corpus import FOLDED_PHONES, FoldTable, PhoneSegment, Utterance, scan_corpus
from .htsvm import HTSVMClassifier, Taxonomy, default_taxonomy, load_taxonomy
from .metrics import EvalReport, evaluate
from .mlp import MLPBaseline
from .smote import SmoteConfig, balance_node, smote
from .spectro import SpectroConfig, SpectrogramImages, extract_frame_images
from .svm import BinarySVC, KernelParams, OneVsOneSVC

__version__ = "0.1.0"

__all__ = [
    "BinarySVC", "EvalReport", "FOLDED_PHONES", "FoldTable", "HTSVMClassifier",
    "KernelParams", "MLPBaseline", "OneVsOneSVC", "PhoneSegment", "ShallowCNN",
    "SmoteConfig", "SpectroConfig", "SpectrogramImages", "Taxonomy", "Utterance",
    "balance_node", "default_taxonomy", "evaluate", "extract_frame_images",
    "load_taxonomy", "scan_corpus", "smote",
]
