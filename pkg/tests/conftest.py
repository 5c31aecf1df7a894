import numpy as np
import pytest
import torch

from lvcodec.codec import CodecConfig, VariableRateCodec
from lvcodec.pipeline import Pipeline
from lvcodec.preedit import PreEditConfig
from lvcodec.toydata import make_toy_images

torch.set_num_threads(1)

TINY_CODEC = dict(n_channels=32)
TINY_PREEDIT = dict(scales=3, base_channels=16)


@pytest.fixture()
def tiny_codec():
    torch.manual_seed(0)
    codec = VariableRateCodec(CodecConfig(**TINY_CODEC))
    codec.eval()
    return codec


@pytest.fixture()
def tiny_pipeline():
    torch.manual_seed(0)
    pipe = Pipeline(CodecConfig(**TINY_CODEC), PreEditConfig(**TINY_PREEDIT))
    pipe.eval()
    return pipe


@pytest.fixture(scope="session")
def toy_image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toyimgs")
    make_toy_images(d, 12, size=(160, 160), seed=11)
    return d


def random_image(rng: np.random.Generator, h: int, w: int) -> torch.Tensor:
    return torch.from_numpy(rng.random((3, h, w), dtype=np.float32))
