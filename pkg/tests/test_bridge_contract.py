"""Primary-side contract tests for the bridge wire schemas, run against the
in-process stub server. The bridge package itself is not required."""

import numpy as np
import pytest
import requests

from motionweave.bridge_client import (
    BridgeBackend,
    BridgeHeadingProvider,
    BridgeSegmentationProvider,
    pack_latent,
    unpack_latent,
)
from motionweave.core import Direction, FrameImage, LatentGrid
from motionweave.errors import BackendError, CharacterNotFoundError
from motionweave.segmenter import SegmentationRequest

from .stub_bridge import StubBridge


@pytest.fixture(scope="module")
def bridge():
    with StubBridge() as stub:
        yield stub


@pytest.fixture()
def backend(bridge):
    return BridgeBackend(bridge.url, latent_shape=(3, 8, 8), timeout=5.0)


def test_latent_envelope_round_trip():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 8, 8)).astype(np.float32)
    out, header = unpack_latent(pack_latent(data, extra={"t": 5}))
    assert np.array_equal(out, data)
    assert header["t"] == 5 and header["dtype"] == "<f4"


def test_health_echoes_schedule(bridge, backend):
    doc = backend.health()
    assert doc["schedule"]["T"] == 50
    assert len(doc["betas"]) == 50
    resp = requests.get(f"{bridge.url}/health", timeout=5)
    assert resp.headers["Content-Type"] == "application/json"


def test_denoise_round_trips_exact_bytes(bridge, backend):
    rng = np.random.default_rng(1)
    x = LatentGrid(rng.normal(size=(3, 8, 8)).astype(np.float32))
    out = backend.denoise(x, 10, "a red square")
    assert np.array_equal(out, x.data * np.float32(0.5))  # stub contract
    resp = requests.post(
        f"{bridge.url}/denoise",
        data=pack_latent(x.data, extra={"t": 10, "condition": ""}),
        headers={"Content-Type": "application/octet-stream"},
        timeout=5,
    )
    assert resp.headers["Content-Type"] == "application/octet-stream"


def test_denoise_missing_t_is_schema_error(bridge):
    rng = np.random.default_rng(2)
    resp = requests.post(
        f"{bridge.url}/denoise",
        data=pack_latent(rng.normal(size=(1, 4, 4)).astype(np.float32)),
        timeout=5,
    )
    assert resp.status_code == 400
    assert "schema" in resp.json()


def test_decode_returns_png(bridge, backend):
    latent = LatentGrid(np.zeros((3, 8, 8), dtype=np.float32))
    image = backend.decode(latent)
    assert image.width == image.height == 64
    resp = requests.post(
        f"{bridge.url}/decode", data=pack_latent(latent.data), timeout=5
    )
    assert resp.headers["Content-Type"] == "image/png"
    assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_segment_content_type_and_mask(bridge, backend):
    pixels = np.zeros((64, 64, 3), dtype=np.uint8)
    pixels[8:24, 8:24] = (220, 40, 40)
    frame = FrameImage(pixels)
    provider = BridgeSegmentationProvider(backend)
    mask = provider.segment(SegmentationRequest(frame=frame, phrase="red square", confidence=0.3))
    assert mask.grid[10, 10] and not mask.grid[40, 40]
    assert mask.grid.sum() == 16 * 16


def test_heading_known_and_unknown(bridge, backend):
    frame = FrameImage(np.zeros((16, 16, 3), dtype=np.uint8))
    provider = BridgeHeadingProvider(backend)
    assert provider.heading(frame, "red square") is Direction.LEFT
    with pytest.raises(CharacterNotFoundError):
        provider.heading(frame, "ghost")


def test_first_frame_returns_png_and_latent(bridge, backend):
    image, latent = backend.first_frame("anything", seed=3, size=64)
    assert image.width == image.height == 64
    assert latent.shape == (3, 8, 8)
    # deterministic per seed
    image2, latent2 = backend.first_frame("anything", seed=3, size=64)
    assert np.array_equal(image.pixels, image2.pixels)
    assert np.array_equal(latent.data, latent2.data)


def test_unreachable_bridge_is_backend_error():
    backend = BridgeBackend("http://127.0.0.1:9", latent_shape=(3, 8, 8), timeout=0.2)
    with pytest.raises(BackendError) as err:
        backend.health()
    assert "127.0.0.1:9" in str(err.value)
