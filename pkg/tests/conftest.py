import pytest

from secfed import phe
from secfed.rng import Stream


@pytest.fixture(scope="session")
def tiny_keypair():
    """n = 15: small enough for exhaustive plaintext-space oracles."""
    return phe.keypair_from_primes(3, 5)


@pytest.fixture(scope="session")
def key128():
    return phe.keygen(128, Stream(1001, "key128"))


@pytest.fixture(scope="session")
def key512():
    return phe.keygen(512, Stream(1001, "key512"))
