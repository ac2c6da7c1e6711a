import numpy as np
import pytest

from riskscope.features import FeatureSynthesizer, surgeries_sorted
from riskscope.predictor import LogisticRiskModel
from riskscope.store import load_dataset
from riskscope.synth import SynthConfig, generate

TINY_CONFIG = dict(seed=5, n_patients=16, series_length_range=(40, 70), anomaly_rate=0.25)
GOLDEN_CONFIG = dict(seed=42, n_patients=48, series_length_range=(60, 100), anomaly_rate=0.15)
# shared by the synth recoverability invariant and the CV-AUC acceptance gate
PLANTED_CONFIG = dict(seed=11, n_patients=1000)


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny_data")
    generate(SynthConfig(**TINY_CONFIG), d)
    return d


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dir):
    return load_dataset(tiny_dir)

@pytest.fixture(scope="session")
def tiny_matrix(tiny_dataset):
    return FeatureSynthesizer().fit_transform(tiny_dataset)


@pytest.fixture(scope="session")
def tiny_labels(tiny_dataset):
    rows = surgeries_sorted(tiny_dataset)
    return {t: np.array([r[f"complication_{t}"] for r in rows]) for t in "LCAIO"}


@pytest.fixture(scope="session")
def golden_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("golden_data")
    generate(SynthConfig(**GOLDEN_CONFIG), d)
    return d


@pytest.fixture(scope="session")
def planted_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("planted_data")
    generate(SynthConfig(**PLANTED_CONFIG), d)
    return d


@pytest.fixture(scope="session")
def planted_dataset(planted_dir):
    return load_dataset(planted_dir)


@pytest.fixture(scope="session")
def planted_matrix(planted_dataset):
    return FeatureSynthesizer().fit_transform(planted_dataset)


@pytest.fixture(scope="session")
def service_state(golden_dir):
    from riskscope.service import AppState, ServiceConfig

    return AppState.build(ServiceConfig(data_dir=str(golden_dir)), train_missing=True)


@pytest.fixture(scope="session")
def service_client(service_state):
    from fastapi.testclient import TestClient

    from riskscope.service import create_app

    return TestClient(create_app(service_state))


def random_linear_model(rng, m, nan_free=True):
    """A hand-assembled logistic model for explainer tests."""
    return LogisticRiskModel.from_dict(
        {
            "weights": rng.normal(0, 1, m).tolist(),
            "bias": float(rng.normal(0, 0.5)),
            "standardization": {
                "means": rng.normal(0, 1, m).tolist(),
                "scales": (0.5 + rng.random(m)).tolist(),
            },
            "imputation": [0.0] * m,
            "feature_ids": [f"f{i}" for i in range(m)],
            "target_label": "C",
        }
    )
