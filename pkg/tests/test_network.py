import numpy as np
import pytest

from mbanet.errors import CheckpointError, ConfigError, ShapeError
from mbanet.network import (
    BackboneConfig,
    Network,
    NetworkConfig,
    build_toy_backbone,
    import_resnet50,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
from mbanet.tensor_core import BatchNorm, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(2)


def images(rng, b=2, size=32):
    return Tensor(rng.normal(size=(b, 3, size, size)))


def test_train_shapes(rng):
    net = Network(NetworkConfig(num_identities=5))
    out = net.forward_train(images(rng))
    assert list(out.logits) == ["spatial", "global", "channel"]
    assert all(v.shape == (2, 5) for v in out.logits.values())
    assert all(v.shape == (2, 128) for v in out.embeddings.values())


def test_label_count_mismatch(rng):
    net = Network(NetworkConfig(num_identities=5))
    with pytest.raises(ShapeError):
        net.forward_train(images(rng), labels=[0, 5])


def test_wrong_input_size(rng):
    with pytest.raises(ShapeError):
        Network(NetworkConfig()).forward_train(images(rng, size=16))


@pytest.mark.parametrize("training", [True, False])
def test_weight_tied_branches_agree_at_init(rng, training):
    net = Network(NetworkConfig(share_stage4=True)).train(training)
    emb = net.forward_train(images(rng)).embeddings
    np.testing.assert_allclose(emb["spatial"].data, emb["global"].data, atol=1e-6)
    np.testing.assert_allclose(emb["channel"].data, emb["global"].data, atol=1e-6)


def test_untied_stage4_copies_are_independent():
    net = Network(NetworkConfig())
    a = net.stage4_global.layers[0].conv.weight
    b = net.stage4_spatial.layers[0].conv.weight
    assert a is not b
    assert not np.array_equal(a.data, b.data)


def test_gradient_step_reaches_every_classifier(rng):
    from mbanet.training import Adam, total_loss

    net = Network(NetworkConfig(num_identities=3))
    before = {b: getattr(net, f"head_{b}").classifier.weight.data.copy() for b in net.branch_names}
    opt = Adam(net.param_groups(), lr=1e-3)
    out = net.forward_train(images(rng), labels=[0, 2])
    total_loss(out.logits, np.array([0, 2]), 0.1).backward()
    opt.step()
    for b in net.branch_names:
        assert not np.array_equal(before[b], getattr(net, f"head_{b}").classifier.weight.data)


def test_descriptor_toy_dim_and_determinism(rng):
    net = Network(NetworkConfig(stage_widths=(16, 32, 64, 64)))
    x = images(rng)
    a, b = net.forward_embed(x), net.forward_embed(x)
    assert a.shape == (2, 3 * 64)
    assert np.array_equal(a.data, b.data)
    assert net.training  # mode restored


def test_descriptor_order_is_spatial_global_channel(rng):
    net = Network(NetworkConfig())
    x = images(rng)
    emb = net.forward_train(x).embeddings  # train mode BN differs, so compare in eval
    net.eval()
    emb = net.branch_embeddings(x)
    desc = net.forward_embed(x).data
    np.testing.assert_array_equal(desc, np.concatenate([emb[b].data for b in ("spatial", "global", "channel")], -1))


def test_train_mode_reproducible_with_seed(rng):
    x = images(rng)
    a = Network(NetworkConfig(init_seed=4)).forward_train(x).logits["global"].data
    b = Network(NetworkConfig(init_seed=4)).forward_train(x).logits["global"].data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- backbone
def test_last_stride_doubles_extent():
    s1 = BackboneConfig(last_stride=1).feature_sizes(64, 64)[-1]
    s2 = BackboneConfig(last_stride=2).feature_sizes(64, 64)[-1]
    assert s1 == (2 * s2[0], 2 * s2[1])
    net1 = Network(NetworkConfig(last_stride=1, input_height=64, input_width=64))
    assert net1.out_size == s1


def test_toy_split_width_on_64px(rng):
    cfg = BackboneConfig()
    trunk, make_stage = build_toy_backbone(cfg)
    feat = trunk(images(rng, size=64))
    assert feat.shape == (2, cfg.split_width, 8, 8)
    out = make_stage()(feat)
    assert out.shape == (2, cfg.out_width, 8, 8)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("widths", [(16, 32, 60, 128), (16, 32, 64, 100), (0, 32, 64, 128)])
def test_invalid_widths(widths):
    with pytest.raises(ConfigError):
        BackboneConfig(stage_widths=widths)


def test_invalid_last_stride():
    with pytest.raises(ConfigError):
        BackboneConfig(last_stride=3)


def test_ablation_configs_build(rng):
    for branches, rpe in [(("global",), True), (("global", "spatial"), False), (("spatial", "global", "channel"), True)]:
        net = Network(NetworkConfig(branches=branches, use_rpe=rpe))
        assert net.forward_embed(images(rng)).shape == (2, 128 * len(branches))


def test_param_groups_split():
    net = Network(NetworkConfig())
    names = {id(p): n for n, p in net.named_parameters()}
    groups = net.param_groups()
    assert all(names[id(p)].startswith(("backbone.", "stage4_")) for p in groups["backbone"])
    new_names = [names[id(p)] for p in groups["new"]]
    assert any(n.startswith("s3.") for n in new_names) and any(n.startswith("head_") for n in new_names)
    assert len(groups["backbone"]) + len(groups["new"]) == len(names)


def test_freeze_gamma_excluded_from_groups():
    net = Network(NetworkConfig(freeze_gamma=True))
    assert all(p is not net.s3.gamma for p in net.param_groups()["new"])


# --------------------------------------------------------------- checkpoint
def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    net = Network(NetworkConfig(init_seed=1))
    net.forward_train(images(rng))  # move BN running stats off their defaults
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    other = Network(NetworkConfig(init_seed=9))
    meta = load_checkpoint(other, path)
    assert meta["network"]["init_seed"] == 1
    for (name, a), (_, b) in zip(net.state_dict().items(), other.state_dict().items()):
        assert np.array_equal(a, b), name


def test_truncated_checkpoint_rejected_without_mutation(tmp_path):
    net = Network(NetworkConfig(init_seed=1))
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    other = Network(NetworkConfig(init_seed=9))
    snapshot = {k: v.copy() for k, v in other.state_dict().items()}
    for cut in (5, 40, len(blob) - 10):
        path.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError, match="corrupt header"):
            load_checkpoint(other, path)
    for k, v in other.state_dict().items():
        assert np.array_equal(v, snapshot[k])


def test_renamed_tensor_named_in_error(tmp_path):
    net = Network(NetworkConfig())
    state = dict(net.state_dict())
    state["s3.gamma_renamed"] = state.pop("s3.gamma")
    path = tmp_path / "bad.ckpt"
    write_tensors(path, state)
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(Network(NetworkConfig()), path)
    assert "s3.gamma_renamed" in str(err.value) and "missing tensors: s3.gamma" in str(err.value)


def test_shape_mismatch_reported(tmp_path):
    net = Network(NetworkConfig())
    state = dict(net.state_dict())
    state["s3.r_h"] = np.zeros((2, 2), dtype=np.float32)
    write_tensors(tmp_path / "x.ckpt", state)
    with pytest.raises(CheckpointError, match="shape mismatch for s3.r_h"):
        load_checkpoint(net, tmp_path / "x.ckpt")


def test_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + b"\0" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        read_tensors(tmp_path / "x.ckpt")


# ------------------------------------------------------------ ResNet50 scale
@pytest.fixture(scope="module")
def resnet_net():
    return Network(NetworkConfig.resnet50(num_identities=72, input_height=64, input_width=64, head_dim=8))


def test_resnet50_descriptor_is_6144(resnet_net):
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 64, 64)))
    assert resnet_net.descriptor_dim == 6144
    assert resnet_net.forward_embed(x).shape == (1, 6144)


def test_import_resnet50_names(tmp_path, resnet_net):
    # fabricate a torchvision-style export from a second network's trunk and layer4
    donor = Network(NetworkConfig.resnet50(num_identities=72, input_height=64, input_width=64, head_dim=8, init_seed=5))
    modules = dict(donor.named_modules())
    exported = {}
    for name, arr in donor.state_dict().items():
        if name.startswith("backbone."):
            key = name[len("backbone."):]
        elif name.startswith("stage4_global."):
            key = "layer4." + name[len("stage4_global."):]
        else:
            continue
        prefix, _, leaf = key.rpartition(".")
        owner = modules.get(name.rpartition(".")[0])
        if isinstance(owner, BatchNorm):
            leaf = {"scale": "weight", "shift": "bias"}.get(leaf, leaf)
        exported[f"{prefix}.{leaf}"] = arr
    exported["fc.weight"] = np.zeros((1000, 2048), dtype=np.float32)
    exported["bn1.num_batches_tracked"] = np.zeros((), dtype=np.int64)
    assert "layer4.2.bn3.weight" in exported and "layer1.0.downsample.0.weight" in exported
    write_tensors(tmp_path / "r50.ckpt", exported)
    skipped = import_resnet50(resnet_net, tmp_path / "r50.ckpt")
    assert sorted(skipped) == ["bn1.num_batches_tracked", "fc.weight"]
    np.testing.assert_array_equal(resnet_net.backbone.conv1.weight.data, donor.backbone.conv1.weight.data)
    for b in ("spatial", "channel"):
        np.testing.assert_array_equal(
            getattr(resnet_net, f"stage4_{b}").layers[2].bn3.scale.data,
            donor.stage4_global.layers[2].bn3.scale.data,
        )


def test_resnet50_forward_matches_torchvision(tmp_path):
    torch = pytest.importorskip("torch")
    torchvision = pytest.importorskip("torchvision")
    torch.manual_seed(0)
    model = torchvision.models.resnet50(weights=None).eval()
    with torch.no_grad():  # non-trivial running statistics
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.uniform_(-0.1, 0.1)
                m.running_var.uniform_(0.5, 1.5)
    write_tensors(tmp_path / "r50.ckpt", {k: v.numpy() for k, v in model.state_dict().items()})
    net = Network(NetworkConfig.resnet50(num_identities=2, input_height=64, input_width=64, head_dim=8,
                                      last_stride=2))
    import_resnet50(net, tmp_path / "r50.ckpt")
    x = np.random.default_rng(0).normal(size=(2, 3, 64, 64)).astype(np.float32)
    with torch.no_grad():
        t = torch.from_numpy(x)
        t = model.maxpool(model.relu(model.bn1(model.conv1(t))))
        t3 = model.layer3(model.layer2(model.layer1(t)))
        t4 = model.layer4(t3).mean(dim=(2, 3))
    net.eval()
    ours3 = net.backbone(Tensor(x)).data
    ours4 = net.branch_embeddings(Tensor(x))["global"].data
    np.testing.assert_allclose(ours3, t3.numpy(), rtol=1e-3, atol=1e-3)
    np.testing.assert_allclose(ours4, t4.numpy(), rtol=1e-3, atol=1e-3)
