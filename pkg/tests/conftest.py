import numpy as np
import pytest

from app.core.config import Settings
from app.models import catalog
from app.services.averaging_service import AveragingService
from app.services.bound_verifier import BoundVerifier
from app.services.geometry_kernel import GeometryKernel
from app.services.moser_service import MoserService
from app.services.normal_slice_service import NormalSliceService
from app.services.submanifold_service import SubmanifoldService


class Stack:
    """Every service built on one model, the way the scenario runner wires them."""

    def __init__(self, model, config: Settings):
        self.model = model
        self.config = config
        self.kernel = GeometryKernel(model, config)
        self.submanifolds = SubmanifoldService(self.kernel)
        self.averaging = AveragingService(self.submanifolds)
        self.slices = NormalSliceService(self.submanifolds)
        self.moser = MoserService(self.slices)
        self.verifier = BoundVerifier(self.slices, self.moser)


@pytest.fixture
def settings() -> Settings:
    return Settings(_env_file=None)


@pytest.fixture
def fast_settings(settings) -> Settings:
    return settings.model_copy(update={"flow_steps": 4, "quadrature_nodes": 6, "sup_refinement": False})


@pytest.fixture
def flat2(settings) -> Stack:
    return Stack(catalog.flat(dim=2), settings)


@pytest.fixture
def flat4(settings) -> Stack:
    return Stack(catalog.flat(dim=4), settings)


@pytest.fixture
def sphere(settings) -> Stack:
    return Stack(catalog.sphere2(), settings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
