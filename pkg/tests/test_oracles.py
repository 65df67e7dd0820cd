"""The reference implementations get their own sanity checks."""

import numpy as np

from oracles import project_simplex, project_simplex_batch


def test_batch_projection_matches_scalar():
    rng = np.random.default_rng(0)
    v = rng.normal(scale=2.0, size=(50, 5))
    batch = project_simplex_batch(v)
    for i in range(50):
        np.testing.assert_allclose(batch[i], project_simplex(v[i]), atol=1e-12)
    np.testing.assert_allclose(batch.sum(axis=1), 1.0, atol=1e-12)


def test_projection_is_identity_on_simplex():
    rng = np.random.default_rng(1)
    v = rng.dirichlet(np.ones(4), size=20)
    np.testing.assert_allclose(project_simplex_batch(v), v, atol=1e-12)
