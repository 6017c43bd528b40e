import numpy as np
import pytest

from altrec.catalog import EncodedProduct
from altrec.neural import init_model


def random_encoded(rng, product_id, vocab_size=40, l_title=6, l_desc=10):
    """EncodedProduct with random in-vocabulary token indices."""
    title_len = int(rng.integers(1, l_title + 1))
    desc_len = int(rng.integers(1, l_desc + 1))
    title = [int(rng.integers(1, vocab_size)) for _ in range(title_len)]
    desc = [int(rng.integers(1, vocab_size)) for _ in range(desc_len)]
    return EncodedProduct(
        product_id,
        tuple(title + [0] * (l_title - title_len)),
        title_len,
        tuple(desc + [0] * (l_desc - desc_len)),
        desc_len,
    )


@pytest.fixture
def small_model():
    return init_model(vocab_size=40, embed_dim=8, hidden_dim=6, seed=3)


@pytest.fixture
def product_factory():
    rng = np.random.default_rng(11)

    def make(product_id, **kwargs):
        return random_encoded(rng, product_id, **kwargs)

    return make
