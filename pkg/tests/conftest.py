"""Shared fixtures: generated datasets are session-scoped and memoized so the
expensive five-cities matrices are built once and reused across test modules."""

import numpy as np
import pytest

from userlifetime import features, synth


@pytest.fixture(scope="session")
def tiny_log():
    return synth.generate(synth.preset("tiny", seed=7))


@pytest.fixture(scope="session")
def tiny_fm(tiny_log):
    return features.extract_matrix(tiny_log)


@pytest.fixture(scope="session")
def city_data():
    """get(seed) -> {"pooled": FeatureMatrix, "communities": {name: FeatureMatrix}}.

    Communities are row slices of the pooled matrix keyed by home community,
    largest first per the preset definition.
    """
    cache = {}

    def get(seed):
        if seed not in cache:
            log = synth.generate(synth.preset("five-cities", seed=seed))
            fm = features.extract_matrix(log)
            homes = np.asarray(fm.home)
            communities = {
                name: fm.take_rows(np.nonzero(homes == name)[0])
                for name, _ in synth.FIVE_CITIES
            }
            cache[seed] = {"pooled": fm, "communities": communities}
        return cache[seed]

    return get
