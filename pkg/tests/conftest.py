import pytest
from hypothesis import HealthCheck, settings

from lateint.embedding import IndexConfig, build_index
from lateint.lexical import build_lexical_index, build_proximity_graph
from lateint.synthetic import SyntheticEncoder, make_collection

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def collection():
    return make_collection(300, 30, seed=11)


@pytest.fixture(scope="session")
def encoder():
    return SyntheticEncoder(dim=32, seed=11, context_noise=0.3)


@pytest.fixture(scope="session")
def doc_mats(collection, encoder):
    return [encoder.encode(d["text"], d["doc_id"]) for d in collection.docs]


@pytest.fixture(scope="session")
def index(doc_mats):
    return build_index(doc_mats, IndexConfig(dim=32, nclusters=64, seed=11, auto_scale=False))


@pytest.fixture(scope="session")
def queries(collection, encoder):
    return [encoder.encode_query(q["query_id"], q["text"]) for q in collection.queries]


@pytest.fixture(scope="session")
def lexical(collection):
    return build_lexical_index(collection.texts(), collection.doc_ids())


@pytest.fixture(scope="session")
def graph(lexical, collection):
    return build_proximity_graph(lexical, collection.texts(), 16)
