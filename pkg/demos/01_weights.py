"""
Spatial weights: grids, standardisation and pooling
===================================================

"""

import numpy as np

from sem_el.weights import build_grid_queen, kronecker_pool, row_standardize, validate_weights

# A 7x7 lattice with queen contiguity: cells touching by an edge or a corner.
w = build_grid_queen(7, 7)
print(validate_weights(w).as_dict())

# Interior cells have eight neighbours, edges five and corners three.
print(w.values.sum(axis=1).reshape(7, 7).astype(int))

# Row-standardising makes every row sum to one, so W is no longer symmetric.
ws = row_standardize(w)
print(np.round(ws.values[0, :9], 3))

# Five independent copies of the grid stacked block-diagonally: n = 245.
pooled = kronecker_pool(5, ws)
print(pooled.n, validate_weights(pooled).max_row_sum)
