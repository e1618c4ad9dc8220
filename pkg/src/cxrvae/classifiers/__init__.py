"""Native tree ensembles, gradient boosting and KNN on embedding tables."""

from .grid import GridSpec, grid_search
from .models import (
    ForestModel, ForestParams, GbmModel, GbmParams, KnnModel, KnnParams,
    fit_forest, fit_gbm, fit_knn, fit_model, predict_proba, table2_params,
)
from .table import EmbeddingTable

__all__ = [
    "EmbeddingTable", "ForestModel", "ForestParams", "GbmModel", "GbmParams", "GridSpec",
    "KnnModel", "KnnParams", "fit_forest", "fit_gbm", "fit_knn", "fit_model", "grid_search",
    "predict_proba", "table2_params",
]
