import numpy as np
import pytest
import torch

from fthnet import config, model, synth
from fthnet.checkpoint import save_checkpoint
from fthnet.trainer import ArrayDataset, TrainConfig, train


@pytest.fixture(scope="session")
def tiny_cfg():
    return config.tiny()


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    m = model.build_model(tiny_cfg, seed=0)
    m.eval()
    return m


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "set"
    synth.synth_generate(24, out, seed=11, image_size=64)
    return out


@pytest.fixture(scope="session")
def synth_data(synth_dir):
    return ArrayDataset.from_manifest(synth_dir / "manifest.csv")


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, synth_data):
    """A briefly trained tiny model, saved as a checkpoint archive."""
    cfg = config.tiny()
    tc = TrainConfig(lr_peak=3e-4, warmup_iters=5, max_iters=30, batch_size=8,
                     seed=3, eval_every=30, log_every=30)
    result = train(cfg, tc, synth_data, list(range(len(synth_data))))
    path = tmp_path_factory.mktemp("ckpt") / "tiny.fthnet"
    save_checkpoint(path, result.model)
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_single_thread():
    torch.set_num_threads(1)
