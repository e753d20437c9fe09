"""Training/holdout data container shared by the models, CV, and the CLI."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .validation import as_matrix, check_coords, check_same_rows


@dataclass
class Dataset:
    """Aligned coordinates (n, d), covariates (n, p), responses (n, q).

    p may be zero (no covariates); q must be at least one. Rows are kept in
    whatever order they were given; models reorder internally.
    """

    coords: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.coords = check_coords(self.coords)
        self.x = as_matrix(self.x, "x", allow_empty_cols=True)
        self.y = as_matrix(self.y, "y")
        check_same_rows(self.n, self.x, "x")
        check_same_rows(self.n, self.y, "y")
        if self.y.shape[1] < 1:
            raise ValidationError("y needs at least one response column")

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def d(self):
        return self.coords.shape[1]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    def take(self, rows):
        """New Dataset holding the given rows (a reordering or a subset)."""
        rows = np.asarray(rows)
        return Dataset(self.coords[rows], self.x[rows], self.y[rows])
