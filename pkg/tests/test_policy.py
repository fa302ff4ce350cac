import math

import numpy as np
import pytest
import torch

from modular_dac import env as E
from modular_dac.policy import (
    CheckpointError,
    PolicyArch,
    PolicyNet,
    batch_tokens,
    load_checkpoint,
    save_checkpoint,
    sinusoidal_table,
)
from modular_dac.problems import make_instance
from modular_dac.structure import generate

TOY = dict(L_max=4, C_max=3)


def toy_batch(B=2, L=4, C=3, n_active=(3, 2), seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    ids = torch.randint(0, 2, (B, L, 16), generator=g).to(dtype)
    feats = torch.rand(B, L, 9, generator=g, dtype=dtype)
    mask = torch.zeros(B, L, dtype=torch.bool)
    for b, n in enumerate(n_active):
        mask[b, :n] = True
    ids = ids * mask[..., None]
    feats = feats * mask[..., None]
    act = mask[..., None].expand(B, L, C).clone()
    act[:, 0, 1:] = False  # a token with one configuration slot
    return {"ids": ids, "feats": feats, "mask": mask, "act_mask": act}


def toy_policy(seed=0, **kw):
    return PolicyNet(PolicyArch(**{**TOY, **kw}), seed=seed).double()


def scalar_loss(policy, batch, actions, w):
    mu, sigma, v = policy(batch["ids"], batch["feats"], batch["mask"])
    lp = policy.log_prob(actions, mu, sigma, batch["act_mask"])
    ent = policy.entropy(sigma, batch["act_mask"])
    return (w[0] * mu).sum() + (w[1] * sigma).sum() + (v * w[2]).sum() + 0.3 * lp.sum() + 0.1 * ent.sum()


# ------------------------------------------------------------ gradients


@pytest.mark.parametrize("ablation", ["full", "npe", "lpe", "mlp"])
def test_gradients_match_finite_differences(ablation):
    policy = PolicyNet(PolicyArch.ablation(ablation, **TOY), seed=1).double()
    batch = toy_batch()
    g = torch.Generator().manual_seed(3)
    actions = torch.rand(2, 4, 3, generator=g, dtype=torch.float64)
    w = [torch.randn(2, 4, 3, generator=g, dtype=torch.float64), torch.randn(2, 4, 3, generator=g, dtype=torch.float64), torch.randn(2, generator=g, dtype=torch.float64)]
    policy.zero_grad()
    scalar_loss(policy, batch, actions, w).backward()
    eps = 1e-4
    for name, p in policy.named_parameters():
        grad = p.grad.detach().clone()
        direction = torch.randn(p.shape, generator=g, dtype=torch.float64)
        with torch.no_grad():
            p += eps * direction
            up = scalar_loss(policy, batch, actions, w).item()
            p -= 2 * eps * direction
            down = scalar_loss(policy, batch, actions, w).item()
            p += eps * direction
        fd = (up - down) / (2 * eps)
        an = float((grad * direction).sum())
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        assert rel < 1e-3, (name, fd, an)


def test_actor_heads_do_not_feed_critic():
    policy = toy_policy()
    batch = toy_batch()
    mu, sigma, v = policy(batch["ids"], batch["feats"], batch["mask"])
    v.sum().backward()
    # actor heads do not feed the critic
    for head in (policy.mu, policy.sigma):
        assert head.weight.grad is None or torch.all(head.weight.grad == 0)


def test_pe_gradient_by_mode():
    for pe, learned in (("sin", False), ("none", False), ("learned", True)):
        policy = toy_policy(pe=pe)
        batch = toy_batch()
        mu, _, v = policy(batch["ids"], batch["feats"], batch["mask"])
        (mu.sum() + v.sum()).backward()
        assert isinstance(policy.pos, torch.nn.Parameter) == learned
        if learned:
            assert policy.pos.grad.abs().sum() > 0


# -------------------------------------------------------------- encoder


def test_sinusoidal_row_zero():
    pe = sinusoidal_table(8, 64)
    np.testing.assert_allclose(pe[0, 0::2].numpy(), 0.0)
    np.testing.assert_allclose(pe[0, 1::2].numpy(), 1.0)


def test_zero_inputs_give_zero_embedding():
    policy = toy_policy(pe="none")
    with torch.no_grad():
        for mod in (policy.embed_id, policy.embed_opt, policy.embed):
            mod.bias.zero_()
    b = toy_batch()
    h = policy.encode(torch.zeros_like(b["ids"]), torch.zeros_like(b["feats"]), b["mask"])
    assert torch.all(h == 0)


def test_identical_tokens_differ_by_pe():
    policy = toy_policy()
    ids = torch.ones(1, 4, 16, dtype=torch.float64)
    feats = torch.full((1, 4, 9), 0.3, dtype=torch.float64)
    mask = torch.ones(1, 4, dtype=torch.bool)
    h = policy.encode(ids, feats, mask)[0]
    pe = policy.pos.to(torch.float64)
    torch.testing.assert_close(h[2] - h[1], pe[2] - pe[1])


def test_too_many_tokens_rejected():
    policy = toy_policy()
    with pytest.raises(ValueError):
        policy.encode(torch.zeros(1, 5, 16, dtype=torch.float64), torch.zeros(1, 5, 9, dtype=torch.float64), torch.ones(1, 5, dtype=torch.bool))


# ------------------------------------------------------------- attention


def test_attention_masking():
    policy = toy_policy()
    b = toy_batch(n_active=(1, 3))
    h = policy.attend(policy.encode(b["ids"], b["feats"], b["mask"]), b["mask"])
    w = policy.blocks[0].mix.last_weights
    # single active token attends only to itself
    torch.testing.assert_close(w[0, :, 0, 0], torch.ones(4, dtype=w.dtype))
    rows = w[1, :, :3, :]
    torch.testing.assert_close(rows.sum(-1), torch.ones_like(rows.sum(-1)))
    assert torch.all(rows[..., 3] == 0)
    assert torch.all(h[0, 1:] == 0) and torch.all(h[1, 3:] == 0)


def test_mlp_ablation_has_no_attention():
    full = toy_policy()
    mlp = toy_policy(mixer="mlp")
    names = [n for n, _ in mlp.named_parameters()]
    assert not any(".mix.q." in n or ".mix.k." in n or ".mix.v." in n for n in names)
    d = 64
    per_block_msa = 4 * (d * d + d)
    per_block_mlp = d * d + d
    assert full.n_params() - mlp.n_params() == 3 * (per_block_msa - per_block_mlp)


def test_pe_ablation_parameter_counts():
    full, npe, lpe = toy_policy(), toy_policy(pe="none"), toy_policy(pe="learned")
    assert full.n_params() == npe.n_params()
    assert lpe.n_params() - full.n_params() == 4 * 64
    assert set(lpe.param_counts()) - set(full.param_counts()) == {"pos"}


def test_layer_shapes():
    p = PolicyNet(PolicyArch())
    assert tuple(p.embed_id.weight.shape) == (16, 16)
    assert tuple(p.embed_opt.weight.shape) == (16, 9)
    assert tuple(p.embed.weight.shape) == (64, 32)
    assert [tuple(b.ff.weight.shape) for b in p.blocks] == [(64, 64)] * 3
    assert tuple(p.mu.weight.shape) == (E.C_MAX, 64)
    assert tuple(p.critic1.weight.shape) == (16, 64) and tuple(p.critic2.weight.shape) == (1, 16)


# ------------------------------------------------------------ decoding


def test_mean_mode_and_log_prob_at_mean():
    policy = toy_policy()
    b = toy_batch()
    actions, lp, ent, v = policy.act(b, mode="mean")
    mu, sigma, _ = policy(b["ids"], b["feats"], b["mask"])
    torch.testing.assert_close(actions, mu)
    ones = torch.ones_like(sigma)
    n = b["act_mask"].sum(dim=(-1, -2)).to(torch.float64)
    torch.testing.assert_close(policy.log_prob(mu, mu, ones, b["act_mask"]), -0.5 * n * math.log(2 * math.pi))


def test_masked_slots_contribute_nothing():
    policy = toy_policy()
    b = toy_batch()
    mu, sigma, _ = policy(b["ids"], b["feats"], b["mask"])
    a = mu + 0.1
    lp = policy.log_prob(a, mu, sigma, b["act_mask"])
    a2 = a.clone()
    a2[~b["act_mask"]] = 123.0
    torch.testing.assert_close(policy.log_prob(a2, mu, sigma, b["act_mask"]), lp)
    empty = torch.zeros_like(b["act_mask"])
    assert torch.all(policy.entropy(sigma, empty) == 0)


def test_sigma_bounds_and_initial_value():
    policy = toy_policy()
    b = toy_batch()
    with torch.no_grad():
        for m in (policy.sigma,):
            m.weight.mul_(1000.0)
        _, sigma, _ = policy(b["ids"], b["feats"], b["mask"])
    assert torch.all(sigma >= 0.01) and torch.all(sigma <= 1.0)
    fresh = toy_policy()
    _, sigma, _ = fresh(b["ids"], b["feats"], b["mask"])
    assert torch.allclose(sigma, torch.full_like(sigma, 0.3), atol=0.02)


def test_mu_stays_in_action_box():
    policy = toy_policy()
    b = toy_batch()
    with torch.no_grad():
        policy.mu.weight.mul_(1000.0)
        mu, _, _ = policy(b["ids"], b["feats"], b["mask"])
    assert torch.all((mu >= 0) & (mu <= 1))


def test_sampling_deterministic_under_generator():
    policy = toy_policy()
    b = toy_batch()
    a1 = policy.act(b, generator=torch.Generator().manual_seed(4))[0]
    a2 = policy.act(b, generator=torch.Generator().manual_seed(4))[0]
    torch.testing.assert_close(a1, a2)


# ---------------------------------------------------------------- critic


def test_value_averaging():
    policy = toy_policy(critic_mean="active")
    with torch.no_grad():
        policy.critic2.weight.zero_()
        policy.critic2.bias.fill_(2.5)
    b = toy_batch()
    h = policy.attend(policy.encode(b["ids"], b["feats"], b["mask"]), b["mask"])
    torch.testing.assert_close(policy.value(h, b["mask"]), torch.full((2,), 2.5, dtype=torch.float64))
    lmax = toy_policy(critic_mean="lmax")
    lmax.load_state_dict(policy.state_dict())
    # padded tokens contribute zero to the L_max denominator
    torch.testing.assert_close(lmax.value(h, b["mask"]), torch.tensor([2.5 * 3 / 4, 2.5 * 2 / 4], dtype=torch.float64))


def test_value_two_token_mean():
    policy = toy_policy(critic_mean="active")
    h = torch.zeros(1, 4, 64, dtype=torch.float64)
    mask = torch.tensor([[True, True, False, False]])
    with torch.no_grad():
        policy.critic1.weight.zero_()
        policy.critic1.bias.zero_()
        policy.critic2.weight.zero_()
    # per-token values 1 and 3 via a position-dependent bias trick
    per = torch.tensor([1.0, 3.0, 99.0, 99.0], dtype=torch.float64)
    v = (per * mask[0]).sum() / mask.sum()
    assert float(v) == 2.0
    h_masked = h.clone()
    h_masked[0, 2:] = 7.0
    torch.testing.assert_close(policy.value(h, mask), policy.value(h_masked, mask))
    with pytest.raises(ValueError):
        policy.value(h, torch.zeros_like(mask))


# ----------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_and_hash(tmp_path):
    policy = PolicyNet(PolicyArch(), seed=3)
    path = save_checkpoint(tmp_path / "c.pt", policy, step=7)
    loaded, blob = load_checkpoint(path, expected=PolicyArch())
    assert blob["step"] == 7
    for (n1, p1), (n2, p2) in zip(policy.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected=PolicyArch.ablation("mlp"))


def test_real_tokens_forward():
    s = generate("DE", np.random.default_rng(0))
    _, tok = E.reset(s, make_instance("sphere", 5, 0), H=10, rng=0)
    policy = PolicyNet(PolicyArch(), seed=0)
    out = policy.act(batch_tokens([tok, tok]), mode="sample", generator=torch.Generator().manual_seed(0))
    assert out[0].shape == (2, E.L_MAX, E.C_MAX)
    assert torch.isfinite(out[1]).all() and torch.isfinite(out[3]).all()
