import numpy as np
import pytest

from vidquery import index as index_mod
from vidquery.pq import PQConfig
from vidquery.synthetic import collection_from_vectors, random_unit_vectors


@pytest.fixture(scope="session")
def small_corpus():
    """500 unit vectors wrapped as a collection, 4 patches per frame."""
    vectors = random_unit_vectors(500, 64, seed=1)
    return vectors, collection_from_vectors(vectors, patches_per_frame=4)


@pytest.fixture(scope="session")
def small_index(small_corpus):
    _, collection = small_corpus
    cfg = PQConfig(dim=64, subspaces=8, centroids=16, train_iters=25, seed=7)
    idx = index_mod.build(collection, cfg)
    idx.validate()
    return idx


@pytest.fixture()
def unit_query():
    q = np.random.default_rng(99).standard_normal(64)
    return q / np.linalg.norm(q)
