import pytest

from sgdlab import load_mnist_subset, write_digit_dataset


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("digits-data")
    return write_digit_dataset(data_dir, 4000, 2000, seed=1)


@pytest.fixture(scope="session")
def digits_objective(digits_dir):
    return load_mnist_subset(digits_dir, 2000, 1000, seed=1)
