"""Architecture shape and configuration guarantees at toy and full scales."""
import pytest
import torch

from damotrainer import (DiscriminatorSpec, Generator, GeneratorSpec,
                         ModelConfigError, build_models)


@pytest.mark.parametrize("resolution", [64, 128, 256])
def test_generator_output_matches_input_resolution(resolution):
    torch.manual_seed(0)
    g = Generator(GeneratorSpec(resolution=resolution, width_factor=0.25))
    with torch.no_grad():
        out = g(torch.rand(2, 4, resolution, resolution))
    assert out.shape == (2, 3, resolution, resolution)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_bottleneck_keeps_nine_residual_blocks_at_every_scale():
    for resolution in (64, 128, 256, 1024):
        spec = GeneratorSpec(resolution=resolution, width_factor=0.25)
        assert spec.residual_blocks == 9
    g = Generator(GeneratorSpec(resolution=64, width_factor=0.25))
    assert len(g.bottleneck) == 9


def test_full_scale_config_is_accepted():
    spec = GeneratorSpec(resolution=1024, width_factor=1.0)
    assert spec.n_down == 5
    assert spec.widths() == [32, 64, 128, 256, 512, 1024]
    d = DiscriminatorSpec(resolution=1024, width_factor=1.0)
    assert d.widths() == (64, 128)


def test_invalid_scale_rejected():
    with pytest.raises(ModelConfigError):
        GeneratorSpec(resolution=96)
    with pytest.raises(ModelConfigError):
        DiscriminatorSpec(resolution=48)
    with pytest.raises(ModelConfigError):
        GeneratorSpec(resolution=64, width_factor=0.0)


def test_generator_rejects_wrong_input_size():
    g = Generator(GeneratorSpec(resolution=64, width_factor=0.25))
    with pytest.raises(ModelConfigError):
        g(torch.rand(1, 4, 128, 128))


def test_discriminator_patch_maps_full_and_half_scale():
    torch.manual_seed(0)
    models = build_models(64, 0.25, seed=0)
    cond = torch.rand(2, 3, 64, 64)
    img = torch.rand(2, 3, 64, 64)
    assert models["d_dls1"](cond, img).shape == (2, 1, 32, 32)
    assert models["d_dls2"](cond, img).shape == (2, 1, 16, 16)
    # the half-scale twin shares the layer structure
    s1 = [type(m).__name__ for m in models["d_dls1"].body]
    s2 = [type(m).__name__ for m in models["d_dls2"].body]
    assert s1 == s2


def test_build_models_is_deterministic_in_seed():
    a = build_models(64, 0.25, seed=3)
    b = build_models(64, 0.25, seed=3)
    for name in a:
        for (ka, va), (kb, vb) in zip(a[name].state_dict().items(),
                                      b[name].state_dict().items()):
            assert ka == kb and torch.equal(va, vb), f"{name}.{ka}"


def test_generator_consumes_noise_channel():
    """The fourth input channel (noise) genuinely reaches the output."""
    torch.manual_seed(1)
    g = Generator(GeneratorSpec(resolution=64, width_factor=0.25)).eval()
    img = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        a = g(torch.cat([img, torch.zeros(1, 1, 64, 64)], dim=1))
        b = g(torch.cat([img, torch.ones(1, 1, 64, 64)], dim=1))
    assert float((a - b).abs().max()) > 0
