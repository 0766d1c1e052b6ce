import math
from functools import lru_cache

import numpy as np
import pytest

from crstokes.mesh import GradingConfig, TetMesh, build_mesh
from crstokes.study import StudyConfig, run_study

OMEGA = 1.5 * math.pi


@pytest.fixture(scope="session")
def graded_mesh():
    return build_mesh(GradingConfig(h=0.5, mu=0.4))


@pytest.fixture(scope="session")
def uniform_mesh():
    return build_mesh(GradingConfig(h=0.5, mu=1.0))


@pytest.fixture(scope="session")
def graded_family():
    return [build_mesh(GradingConfig(h=h, mu=0.4)) for h in (0.5, 0.354, 0.25)]


def two_tet_mesh():
    v = np.array([[0.2, 0.1, 0.0], [1.0, 0.3, 0.1], [0.4, 1.1, 0.2], [0.3, 0.4, 1.0], [0.9, 1.0, 0.9]])
    return TetMesh(v, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]))


def box_mesh(n=2):
    """Structured Kuhn-split cube [0, 1]^3 with n cells per side."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    idx = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    kuhn = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                c = [idx[i + a, j + b, k + d] for a in (0, 1) for b in (0, 1) for d in (0, 1)]
                # corner numbering: bit 2 = x, bit 1 = y, bit 0 = z; Kuhn tables use x=1, y=2, z=4
                corner = {a * 1 + b * 2 + d * 4: c[a * 4 + b * 2 + d] for a in (0, 1) for b in (0, 1) for d in (0, 1)}
                tets += [[corner[q] for q in t] for t in kuhn]
    return TetMesh(verts, np.array(tets))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@lru_cache(maxsize=None)
def cached_study(example=1, method="cr-rt", nu=1.0, mu=0.4, levels=5, phi_variant=1):
    """Studies are expensive; share them between test modules within one session."""
    return run_study(StudyConfig(example=example, method=method, nu=nu, mu=mu, levels=levels,
                                 phi_variant=phi_variant))
