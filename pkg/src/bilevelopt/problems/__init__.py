from .data import (
    DATA_DIR_ENV,
    LibsvmParseError,
    SparseDataset,
    corrupt_labels,
    data_dir,
    load_libsvm,
    parse_libsvm,
    read_idx,
    serialize_libsvm,
)
from .hyperclean import (
    DEFAULT_CR,
    MNIST_DIMS,
    HyperCleanProblem,
    LabeledSet,
    make_hyperclean,
    make_synthetic_hyperclean,
)
from .logreg import IJCNN1_DIMS, LogRegHyperProblem, make_logreg_hyper, make_synthetic_logreg
from .quadratic import QuadraticBilevel, make_quadratic
from .ridge import RidgeHyperProblem, make_toy_ridge

__all__ = [
    "DATA_DIR_ENV", "DEFAULT_CR", "IJCNN1_DIMS", "MNIST_DIMS", "HyperCleanProblem",
    "LabeledSet", "LibsvmParseError", "LogRegHyperProblem", "QuadraticBilevel",
    "RidgeHyperProblem", "SparseDataset", "corrupt_labels", "data_dir", "load_libsvm",
    "make_hyperclean", "make_logreg_hyper", "make_quadratic", "make_synthetic_hyperclean",
    "make_synthetic_logreg", "make_toy_ridge", "parse_libsvm", "read_idx",
    "serialize_libsvm",
]
