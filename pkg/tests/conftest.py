import pytest

from mempool_sim.geometry import ClusterGeometry, TimingParams, validate


@pytest.fixture(scope="session")
def default_cfg():
    return validate(ClusterGeometry(), TimingParams())


@pytest.fixture(scope="session")
def small_cfg():
    """32 cores, 16 tiles in 4 groups: valid for every topology."""
    return validate(
        ClusterGeometry(cores_per_tile=2, tiles_per_group=4, groups=4,
                        banks_per_tile=4, bank_words=16, seq_rows_per_bank=4),
        TimingParams())
