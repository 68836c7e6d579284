"""Luminance stage: shape/determinism contracts, loss decomposition, the
frozen-VAE rule, and bundle persistence. Short runs only; learning-curve
behavior is covered by the acceptance suite."""

import numpy as np
import pytest

from previvor import lumen
from previvor.corpus import SynthConfig, build_training_corpus
from previvor.errors import ConfigError, StateError
from previvor.imagecore import DomainTag, LuminancePlane
from previvor.nnet import tensor as T
from previvor.nnet.tensor import Tensor


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    cfg = lumen.toy_lumen_config(seed=0, iterations=3)
    return build_training_corpus(
        SynthConfig(), 10, cfg.degradation, tmp_path_factory.mktemp("corpus"), seed=11
    )


def toy_cfg(iters=3, seed=0):
    return lumen.toy_lumen_config(seed=seed, iterations=iters)


class TestVaeForward:
    def test_output_shape_matches_input(self):
        cfg = toy_cfg()
        vae = lumen.Vae(cfg, lumen.SHARED_DOMAIN, np.random.default_rng(0))
        plane = LuminancePlane(
            values=np.random.default_rng(1).uniform(0, 255, (64, 64)),
            domain_tag=DomainTag.REAL_DEGRADED,
        )
        recon, mu, logvar, z = lumen.vae_forward(vae, plane)
        assert recon.shape == (64, 64)
        assert mu.shape == (1, 8, 8, cfg.latent_channels)
        assert logvar.shape == mu.shape

    def test_inference_mode_is_deterministic(self):
        cfg = toy_cfg()
        vae = lumen.Vae(cfg, lumen.SHARED_DOMAIN, np.random.default_rng(0))
        plane = LuminancePlane(
            values=np.random.default_rng(2).uniform(0, 255, (64, 64)),
            domain_tag=DomainTag.REAL_DEGRADED,
        )
        r1, *_ = lumen.vae_forward(vae, plane)
        r2, *_ = lumen.vae_forward(vae, plane)
        assert np.array_equal(r1.values, r2.values)

    def test_untrained_net_finite_over_seeds(self):
        cfg = toy_cfg()
        for seed in range(5):
            vae = lumen.Vae(cfg, lumen.ND_DOMAIN, np.random.default_rng(seed))
            plane = LuminancePlane(
                values=np.random.default_rng(seed).uniform(0, 255, (64, 64)),
                domain_tag=DomainTag.NON_DEGRADED,
            )
            recon, mu, logvar, z = lumen.vae_forward(vae, plane, np.random.default_rng(seed))
            assert np.all(np.isfinite(recon.values))
            assert np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))
            from previvor.nnet.losses import kl_loss, pixel_loss
            from previvor.nnet.tensor import Tensor

            pix = pixel_loss(Tensor(recon.values / 127.5 - 1), Tensor(plane.values / 127.5 - 1),
                             smooth=True).item()
            kl = kl_loss(Tensor(mu), Tensor(logvar)).item()
            assert np.isfinite(pix) and np.isfinite(kl)

    def test_sampled_latent_uses_eps(self):
        cfg = toy_cfg()
        vae = lumen.Vae(cfg, lumen.ND_DOMAIN, np.random.default_rng(0))
        plane = LuminancePlane(
            values=np.random.default_rng(3).uniform(0, 255, (64, 64)),
            domain_tag=DomainTag.NON_DEGRADED,
        )
        _, mu1, _, z_mean = lumen.vae_forward(vae, plane)
        _, _, _, z_samp = lumen.vae_forward(vae, plane, np.random.default_rng(4))
        assert np.array_equal(z_mean, mu1)
        assert not np.array_equal(z_samp, mu1)


class TestTraining:
    def test_shared_vae_loss_terms_and_finite_start(self, small_corpus):
        _, _, _, log = lumen.train_vae_shared(toy_cfg(), small_corpus)
        first = log[0]
        assert first["total"] > 0.0 and np.isfinite(first["total"])
        assert {"pixel", "adv", "feat", "latent_adv", "kl"} <= set(first)

    def test_nd_vae_has_exactly_four_generator_terms(self, small_corpus):
        _, _, log = lumen.train_vae_nd(toy_cfg(), small_corpus)
        gen_terms = set(log[0]) - {"iteration", "total", "disc", "lr"}
        assert gen_terms == {"pixel", "adv", "feat", "kl"}

    def test_training_bit_reproducible(self, small_corpus):
        v1, _, log1 = lumen.train_vae_nd(toy_cfg(seed=5), small_corpus)
        v2, _, log2 = lumen.train_vae_nd(toy_cfg(seed=5), small_corpus)
        assert log1 == log2
        s1, s2 = v1.state_arrays(), v2.state_arrays()
        assert s1.keys() == s2.keys()
        for k in s1:
            assert np.array_equal(s1[k], s2[k])

    def test_empty_corpus_rejected(self, tmp_path):
        from previvor.corpus import CorpusManifest

        empty = CorpusManifest(root=tmp_path, entries=[])
        with pytest.raises(ConfigError):
            lumen.train_vae_shared(toy_cfg(), empty)


class TestMapping:
    def test_requires_frozen_vaes(self, small_corpus):
        cfg = toy_cfg()
        rng = np.random.default_rng(0)
        shared = lumen.Vae(cfg, lumen.SHARED_DOMAIN, rng)
        nd = lumen.Vae(cfg, lumen.ND_DOMAIN, rng)
        with pytest.raises(StateError):
            lumen.train_mapping(cfg, small_corpus, shared, nd)

    def test_latent_l1_weight_defaults_to_60(self):
        assert lumen.LumenLossWeights().latent_l1 == 60.0
        assert lumen.LumenTrainConfig().mapping_blocks == 6
        assert lumen.LumenTrainConfig().mapping_dim == 512

    def test_identity_mapping_zero_latent_term(self):
        # degenerate construction: same encoder on both sides, identity map
        cfg = lumen.LumenTrainConfig(
            batch_size=1, mapping_dim=8, latent_channels=8, mapping_blocks=2
        )
        rng = np.random.default_rng(0)
        shared = lumen.Vae(cfg, lumen.SHARED_DOMAIN, rng)
        mapping = lumen.MappingNetwork(cfg, np.random.default_rng(1))
        eye = np.zeros((1, 1, 8, 8))
        eye[0, 0] = np.eye(8)
        mapping.in_proj.weight.values = eye.copy()
        mapping.in_proj.bias.values[:] = 0.0
        mapping.out_proj.weight.values = eye.copy()
        mapping.out_proj.bias.values[:] = 0.0
        for block in mapping.blocks:
            block.conv2.weight.values[:] = 0.0
            block.conv2.bias.values[:] = 0.0

        x = Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 64, 64, 1)))
        mu, _ = shared.encode(x)
        mapped = mapping(mu)
        term = T.absolute(mapped - mu.detach()).mean()
        assert term.item() == pytest.approx(0.0, abs=1e-12)

    def test_mapping_changes_no_vae_parameter(self, small_corpus):
        cfg = toy_cfg()
        shared, _, _, _ = lumen.train_vae_shared(cfg, small_corpus)
        nd, _, _ = lumen.train_vae_nd(cfg, small_corpus)
        lumen.freeze(shared)
        lumen.freeze(nd)
        before = {
            name: arr.copy()
            for module in (shared, nd)
            for name, arr in _checksum_arrays(module).items()
        }
        lumen.train_mapping(cfg, small_corpus, shared, nd)
        after = {
            name: arr
            for module in (shared, nd)
            for name, arr in _checksum_arrays(module).items()
        }
        assert before.keys() == after.keys()
        for name in before:
            assert np.array_equal(before[name], after[name]), name

    def test_mapping_log_has_four_generator_terms(self, small_corpus):
        cfg = toy_cfg()
        shared, _, _, _ = lumen.train_vae_shared(cfg, small_corpus)
        nd, _, _ = lumen.train_vae_nd(cfg, small_corpus)
        lumen.freeze(shared)
        lumen.freeze(nd)
        _, _, log = lumen.train_mapping(cfg, small_corpus, shared, nd)
        gen_terms = set(log[0]) - {"iteration", "total", "disc", "lr"}
        assert gen_terms == {"pixel", "adv", "feat", "latent_l1"}


def _checksum_arrays(module):
    return {name: p.values for name, p in lumen._all_named(module)}


@pytest.fixture(scope="module")
def bundle(small_corpus):
    cfg = toy_cfg()
    shared, _, _, _ = lumen.train_vae_shared(cfg, small_corpus)
    nd, _, _ = lumen.train_vae_nd(cfg, small_corpus)
    lumen.freeze(shared)
    lumen.freeze(nd)
    mapping, _, _ = lumen.train_mapping(cfg, small_corpus, shared, nd)
    return lumen.LumenBundle(shared=shared, nd=nd, mapping=mapping, config=cfg)


class TestRestore:
    def _degraded_plane(self, seed=0):
        return LuminancePlane(
            values=np.random.default_rng(seed).uniform(0, 140, (64, 64)),
            domain_tag=DomainTag.REAL_DEGRADED,
        )

    def test_shape_and_tag(self, bundle):
        out = lumen.restore_luminance(self._degraded_plane(), bundle)
        assert out.shape == (64, 64)
        assert out.domain_tag is DomainTag.RESTORED

    def test_deterministic(self, bundle):
        p = self._degraded_plane(1)
        a = lumen.restore_luminance(p, bundle)
        b = lumen.restore_luminance(p, bundle)
        assert np.array_equal(a.values, b.values)

    def test_rejects_non_degraded_input(self, bundle):
        plane = LuminancePlane(values=np.zeros((64, 64)), domain_tag=DomainTag.NON_DEGRADED)
        with pytest.raises(StateError):
            lumen.restore_luminance(plane, bundle)

    def test_rejects_wrong_resolution(self, bundle):
        plane = LuminancePlane(
            values=np.zeros((32, 32)), domain_tag=DomainTag.REAL_DEGRADED
        )
        with pytest.raises(ConfigError):
            lumen.restore_luminance(plane, bundle)

    def test_bundle_round_trip(self, bundle, tmp_path):
        path = tmp_path / "lumen.ckpt"
        lumen.save_lumen_bundle(path, bundle, config_hash="deadbeef")
        loaded = lumen.load_lumen_bundle(path)
        p = self._degraded_plane(2)
        a = lumen.restore_luminance(p, bundle)
        b = lumen.restore_luminance(p, loaded)
        assert np.array_equal(a.values, b.values)


class TestLatentProbe:
    def test_separable_domains_score_high(self, small_corpus):
        cfg = toy_cfg()
        vae = lumen.Vae(cfg, lumen.SHARED_DOMAIN, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        dark = [rng.uniform(0, 60, (64, 64)) for _ in range(16)]
        bright = [rng.uniform(180, 255, (64, 64)) for _ in range(16)]
        acc = lumen.latent_domain_probe_accuracy(vae, dark, bright, seed=0)
        assert acc > 0.8

    def test_identical_domains_score_near_half(self, small_corpus):
        cfg = toy_cfg()
        vae = lumen.Vae(cfg, lumen.SHARED_DOMAIN, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        planes = [rng.uniform(0, 255, (64, 64)) for _ in range(32)]
        acc = lumen.latent_domain_probe_accuracy(vae, planes[:16], planes[16:], seed=0)
        assert 0.2 <= acc <= 0.8
