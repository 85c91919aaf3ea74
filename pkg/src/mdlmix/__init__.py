"""Bit-cost regularized fitting of diagonal Gaussian mixtures.

Fits probability density models by minimizing the total number of bits
needed to store the model parameters and the encoded dataset together.
The encoding map is the chain of conditional CDFs of the mixture, whose
Jacobian determinant is the model density; truncating the parameters to a
finite precision eats into the volume available for encoding the data,
which penalizes sharp, parameter-hungry fits and prunes obsolete mixture
components on its own.
"""

from .bitcost import (BitCostBreakdown, Mode, PerturbationMatrix,
                      TruncationRanges, perturbation_matrix, precision_penalty,
                      total_bit_cost, univariate_bit_cost, volume_column_shift,
                      volume_decoupled, volume_det_lemma)
from .dataio import (CrossTable, GeneratorSpec, GridSpec, crosstab,
                     default_generator_spec, generate, load_dataset, load_model,
                     plotdata, save_dataset, save_fit_result, save_model)
from .exceptions import (DegenerateJacobianError, DegenerateParameterError,
                         EvaluationError, FitFailureError,
                         IrreparableRangesError, MdlmixError, ModelFormatError,
                         PruneError, UnsupportedPlotError)
from .mixture import (Dataset, DatasetEncoding, EncoderEval, MixtureParams,
                      Scheme, encode, encode_dataset, jac_x_from_means, log_pdf,
                      log_pdf_batch, weights)
from .optimize import (FitConfig, FitResult, fit, numeric_gradient, prune,
                       repair_truncation)
from .uncertainty import ErrorEstimate, encoded_noise_std, estimate_errors

__version__ = "0.1.0"

__all__ = [
    "BitCostBreakdown", "CrossTable", "Dataset", "DatasetEncoding",
    "DegenerateJacobianError", "DegenerateParameterError", "EncoderEval",
    "ErrorEstimate", "EvaluationError", "FitConfig", "FitFailureError",
    "FitResult", "GeneratorSpec", "GridSpec", "IrreparableRangesError",
    "MdlmixError", "MixtureParams", "Mode", "ModelFormatError",
    "PerturbationMatrix", "PruneError", "Scheme", "TruncationRanges",
    "UnsupportedPlotError", "crosstab", "default_generator_spec", "encode",
    "encode_dataset", "encoded_noise_std", "estimate_errors", "fit", "generate",
    "jac_x_from_means", "load_dataset", "load_model", "log_pdf",
    "log_pdf_batch", "numeric_gradient", "perturbation_matrix", "plotdata",
    "precision_penalty", "prune", "repair_truncation", "save_dataset",
    "save_fit_result", "save_model", "total_bit_cost", "univariate_bit_cost",
    "volume_column_shift", "volume_decoupled", "volume_det_lemma", "weights",
]
