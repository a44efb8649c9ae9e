"""Maximal updated density estimation: closed-form linear-Gaussian solvers,
KDE-based sample solvers, data-constructed QoI maps, and the E(r) diagnostic."""

from .density import (KdeModel, SampleEnsemble, UniformDensity, UpdateResult, expectation_r,
                      fit_kde, predicted_density, select_pca_components, update)
from .linalg import AffineMap, GaussianDensity, LinAlgInputError, pseudo_inverse
from .linear import (EstimateReport, LinearGaussianProblem, PredictabilityError,
                     SingularCovarianceError, UnsupportedProblemError, check_predictability,
                     effective_regularization, least_squares, map_point, mud_point,
                     mud_point_alt, objective_J, objective_T, posterior_covariance,
                     predicted_covariance, updated_covariance)
from .qoi import (LinearMeasurementSet, MeasurementData, PcaMap, ResidualMatrix,
                  assemble_wme_affine, build_residual_matrix, fit_pca,
                  min_data_for_predictability, q_me, q_pca, q_wme)

__version__ = "0.1.0"
