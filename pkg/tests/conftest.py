import numpy as np
import pytest

from varda import elliptic, mesh, problems


@pytest.fixture(scope="session")
def ex1i():
    return problems.example1("i")


@pytest.fixture(scope="session")
def smesh40():
    return mesh.build_spatial_mesh(0.0, 1.0, 40)


@pytest.fixture(scope="session")
def tgrid40():
    return mesh.build_uniform_time_grid(1.0, 40)


@pytest.fixture(scope="session")
def ex1i_system(ex1i, smesh40, tgrid40):
    return elliptic.assemble(ex1i, smesh40, tgrid40)


@pytest.fixture(scope="session")
def ex1i_solution(ex1i_system):
    return elliptic.solve_sparse(ex1i_system)


def nodal(fun, taus, nodes):
    """Sample a (t, x) callback on a tensor grid, time-major."""
    return np.array(
        [np.broadcast_to(np.asarray(fun(t, nodes), dtype=float), nodes.shape) for t in taus]
    )
