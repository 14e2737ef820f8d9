import numpy as np
import pytest

from adnet.augment import CropParams, ViewTriplet
from adnet.model import BackboneSpec, init_model
from adnet.synth import SynthSpec, generate

TINY_SPEC = BackboneSpec(widths=(8, 16), blocks=(1, 1), gn_groups=4)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Small on-disk synthetic dataset shared by data/trainer/cli tests."""
    root = tmp_path_factory.mktemp("synthdata")
    spec = SynthSpec(num_classes=3, train_per_class=10, test_per_class=4, side=32)
    generate(root, spec, seed=7)
    return root


@pytest.fixture
def tiny_state():
    return init_model(TINY_SPEC, num_classes=3, seed=1, dropout_rate=0.0)


def fake_triplet(gen: np.random.Generator, side: int = 12,
                 extra: int = 0, equal_views: bool = False) -> ViewTriplet:
    """A ViewTriplet with random pixel content, bypassing the augment pipeline."""
    def view():
        return gen.random((side, side, 3)).astype(np.float32)

    first = view()
    crop = CropParams(x=0, y=0, w=side, h=side, area_fraction=0.75, aspect=1.0)
    return ViewTriplet(
        cls_view=first,
        target_view=first if equal_views else view(),
        source_view=first if equal_views else view(),
        target_crop=crop, source_crop=crop,
        extra_views=tuple(view() for _ in range(extra)),
    )


def fake_batch(gen: np.random.Generator, n: int, side: int = 12, extra: int = 0):
    return [fake_triplet(gen, side, extra) for _ in range(n)]
