import numpy as np
import pytest
import scipy.sparse as sp

from saddlesolve.sparse import as_csr


def random_sparse(n, density, seed, diag_shift=0.0):
    """Deterministic random CSR with an optional diagonal shift."""
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=density, random_state=seed, format="csr")
    dense = a.toarray()
    dense += diag_shift * np.eye(n)
    return as_csr(sp.csr_matrix(dense)), rng


def random_saddle(nb, ne, seed, shift=4.0):
    """Random saddle-point matrix [[B, E^T], [E, 0]] with explicit zeros in
    the trailing diagonal block so the pattern matches FEM assemblies."""
    rng = np.random.default_rng(seed)
    b = rng.random((nb, nb)) * (rng.random((nb, nb)) < 0.25) + shift * np.eye(nb)
    e = rng.random((ne, nb)) * (rng.random((ne, nb)) < 0.4)
    e[np.arange(ne), np.arange(ne) % nb] += 1.0
    n = nb + ne
    dense = np.zeros((n, n))
    dense[:nb, :nb] = b
    dense[:nb, nb:] = e.T
    dense[nb:, :nb] = e
    return as_csr(sp.csr_matrix(dense))


@pytest.fixture(scope="session")
def cavity_level4():
    from saddlesolve import cavity as cav
    return cav.build_problem(4, re=100.0)


@pytest.fixture(scope="session")
def cavity_level4_stokes(cavity_level4):
    from saddlesolve import cavity as cav
    return cav.stokes_initial_guess(cavity_level4)
