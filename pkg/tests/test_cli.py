"""CLI contract tests: exit codes, library parity, determinism, resume."""

import json

import numpy as np
import pytest

from previvor.cli import main
from previvor.corpus import SynthConfig, generate_synthetic_painting
from previvor.imagecore import lab_to_rgb, load_png, rgb_to_lab, save_png
from previvor.prior import PriorConfig, PriorMask, compute_prior_mask, extract_color_prior


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def toy_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "toy.toml"
    path.write_text(
        "\n".join(
            [
                "seed = 5",
                "[corpus]",
                "n_images = 10",
                "[lumen]",
                "batch_size = 4",
                "iterations = 2",
                "mapping_dim = 32",
                "checkpoint_every = 2",
                "[hue]",
                "iterations = 2",
                "checkpoint_every = 2",
                "[evaluate]",
                "feature_dim = 9",
            ]
        )
    )
    return path


@pytest.fixture(scope="module")
def corpus_dir(toy_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "corpus"
    assert run("make-corpus", "--config", toy_config, "--out", out, "--n", 10) == 0
    return out


class TestMakeCorpus:
    def test_default_config_counts(self, tmp_path):
        out = tmp_path / "c"
        assert run("make-corpus", "--out", out, "--n", 20) == 0
        assert len(list(out.rglob("*.png"))) == 40
        assert (out / "manifest.jsonl").exists()

    def test_byte_identical_tree(self, toy_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run("make-corpus", "--config", toy_config, "--out", out1, "--n", 6) == 0
        assert run("make-corpus", "--config", toy_config, "--out", out2, "--n", 6) == 0
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("make-corpus", "--n", "5")
        assert exc.value.code == 2

    def test_env_seed_lowest_priority(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PREVIVOR_SEED", "99")
        out = tmp_path / "c"
        assert run("make-corpus", "--out", out, "--n", 2) == 0
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["seed"] == 99

    def test_unknown_config_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[corpus]\nmystery_knob = 3\n")
        assert run("make-corpus", "--config", bad, "--out", tmp_path / "c", "--n", 2) == 2


class TestFitCurve:
    def test_linear_recovery(self, tmp_path):
        # build a corpus with a KNOWN fixed linear degradation
        from previvor.corpus import CorpusManifest, ManifestEntry
        from previvor.degrade import LinearCurveParams, apply_linear_degradation
        from previvor.imagecore import DomainTag, LabImage, luminance_8bit

        root = tmp_path / "pairs"
        entries = []
        rng = np.random.default_rng(0)
        for i in range(4):
            L = rng.uniform(0, 100, (64, 64))
            clean = LabImage(L=L, a=np.zeros((64, 64)), b=np.zeros((64, 64)))
            lum = luminance_8bit(clean, DomainTag.NON_DEGRADED)
            degr = apply_linear_degradation(lum, LinearCurveParams(0.35, 20.0))
            degraded = LabImage(
                L=degr.values * 100 / 255, a=np.zeros((64, 64)), b=np.zeros((64, 64))
            )
            for role, img in (("non_degraded", clean), ("paired_degraded", degraded)):
                rel = f"{role}_{i}.png"
                save_png(lab_to_rgb(img), root / rel)
                entries.append(ManifestEntry(path=rel, role=role, pair_id=f"{i}"))
        manifest_path = CorpusManifest(root=root, entries=entries).save()

        out = tmp_path / "curve.json"
        assert run("fit-curve", "--pairs", manifest_path, "--bins", 32, "--out", out) == 0
        from previvor.degrade import EmpiricalCurve

        curve = EmpiricalCurve.load(out)
        populated = curve.counts > 0
        centers = curve.bin_centers
        # quantization through PNG adds < 1 L8 unit of noise
        expected = -0.65 * centers + 20.0
        assert np.all(np.abs(curve.mean_delta[populated] - expected[populated]) < 1.0)

    def test_identity_pairs_zero_curve(self, tmp_path):
        from previvor.corpus import CorpusManifest, ManifestEntry

        root = tmp_path / "pairs"
        rng = np.random.default_rng(1)
        entries = []
        img = lab_to_rgb(generate_synthetic_painting(SynthConfig(), rng))
        for i in range(2):
            for role in ("non_degraded", "paired_degraded"):
                rel = f"{role}_{i}.png"
                save_png(img, root / rel)
                entries.append(ManifestEntry(path=rel, role=role, pair_id=f"{i}"))
        manifest_path = CorpusManifest(root=root, entries=entries).save()
        out = tmp_path / "curve.json"
        assert run("fit-curve", "--pairs", manifest_path, "--out", out) == 0
        from previvor.degrade import EmpiricalCurve

        curve = EmpiricalCurve.load(out)
        assert np.allclose(curve.mean_delta[curve.counts > 0], 0.0)

    def test_single_bin_is_global_mean(self, corpus_dir, tmp_path):
        out = tmp_path / "curve1.json"
        assert run(
            "fit-curve", "--pairs", corpus_dir / "manifest.jsonl", "--bins", 1, "--out", out
        ) == 0
        from previvor.degrade import EmpiricalCurve

        curve = EmpiricalCurve.load(out)
        assert curve.mean_delta.shape == (1,)

    def test_no_pairs_fails(self, tmp_path):
        from previvor.corpus import CorpusManifest, ManifestEntry

        root = tmp_path / "solo"
        rel = "img.png"
        save_png(
            lab_to_rgb(generate_synthetic_painting(SynthConfig(), np.random.default_rng(0))),
            root / rel,
        )
        manifest_path = CorpusManifest(
            root=root, entries=[ManifestEntry(path=rel, role="non_degraded")]
        ).save()
        assert run("fit-curve", "--pairs", manifest_path, "--out", tmp_path / "c.json") == 2


class TestExtractPrior:
    def test_background_only_mask_mostly_zero(self, tmp_path):
        img = generate_synthetic_painting(
            SynthConfig(shape_count_range=(0, 0)), np.random.default_rng(3)
        )
        png = tmp_path / "bg.png"
        save_png(lab_to_rgb(img), png)
        mask_path, silk_path = tmp_path / "mask.png", tmp_path / "silk.json"
        assert run("extract-prior", "--image", png, "--out-mask", mask_path, "--out-silk", silk_path) == 0
        mask = PriorMask.load(mask_path)
        assert mask.mask.mean() < 0.01
        silk = json.loads(silk_path.read_text())
        assert {"a", "b", "support_fraction"} <= set(silk)

    def test_forced_failure_with_zero_bg_mask(self, tmp_path):
        img = generate_synthetic_painting(SynthConfig(), np.random.default_rng(4))
        png = tmp_path / "img.png"
        save_png(lab_to_rgb(img), png)
        zero_mask = tmp_path / "zeros.png"
        PriorMask(mask=np.zeros((64, 64))).save(zero_mask)
        code = run(
            "extract-prior", "--image", png, "--bg-mask", zero_mask,
            "--out-mask", tmp_path / "m.png", "--out-silk", tmp_path / "s.json",
        )
        assert code == 1

    def test_cli_mask_matches_library_bit_exact(self, tmp_path):
        img = generate_synthetic_painting(SynthConfig(), np.random.default_rng(5))
        png = tmp_path / "img.png"
        save_png(lab_to_rgb(img), png)
        mask_path = tmp_path / "mask.png"
        assert run("extract-prior", "--image", png, "--out-mask", mask_path, "--out-silk", tmp_path / "s.json") == 0
        lab = rgb_to_lab(load_png(png))
        res = extract_color_prior(lab, PriorConfig())
        lib_mask = compute_prior_mask(lab, res.silk.c_silk, PriorConfig().tau)
        assert np.array_equal(PriorMask.load(mask_path).mask, lib_mask.mask)


class TestTraining:
    def test_train_lumen_writes_bundle_and_logs(self, toy_config, corpus_dir, tmp_path):
        out = tmp_path / "lumen"
        code = run(
            "train-lumen", "--config", toy_config,
            "--corpus", corpus_dir / "manifest.jsonl", "--out", out,
        )
        assert code == 0
        assert (out / "lumen.ckpt").exists()
        for name in ("vae_shared", "vae_nd", "mapping"):
            log = (out / f"lumen_{name}.jsonl").read_text().splitlines()
            assert len(log) == 2
            assert json.loads(log[0])["iteration"] == 0

    def test_train_hue_resume_continues_step_count(self, corpus_dir, tmp_path):
        cfg2 = tmp_path / "c2.toml"
        cfg2.write_text("seed = 5\n[hue]\niterations = 2\ncheckpoint_every = 2\n")
        out = tmp_path / "hue"
        assert run("train-hue", "--config", cfg2, "--corpus", corpus_dir / "manifest.jsonl", "--out", out) == 0
        assert (out / "state_hue.ckpt").exists()
        log = [json.loads(l) for l in (out / "hue.jsonl").read_text().splitlines()]
        assert [e["iteration"] for e in log] == [0, 1]

        cfg4 = tmp_path / "c4.toml"
        cfg4.write_text("seed = 5\n[hue]\niterations = 4\ncheckpoint_every = 2\n")
        assert run(
            "train-hue", "--config", cfg4, "--corpus", corpus_dir / "manifest.jsonl",
            "--out", out, "--resume",
        ) == 0
        log = [json.loads(l) for l in (out / "hue.jsonl").read_text().splitlines()]
        assert [e["iteration"] for e in log] == [0, 1, 2, 3]

    def test_train_hue_refuses_missing_lumen_checkpoint(self, corpus_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(
            "[hue]\niterations = 2\nlumen_checkpoint = \"%s\"\n" % (tmp_path / "absent.ckpt")
        )
        code = run("train-hue", "--config", cfg, "--corpus", corpus_dir / "manifest.jsonl",
                   "--out", tmp_path / "h")
        assert code == 2


@pytest.fixture(scope="module")
def trained(toy_config, corpus_dir, tmp_path_factory):
    base = tmp_path_factory.mktemp("trained")
    assert run("train-lumen", "--config", toy_config, "--corpus", corpus_dir / "manifest.jsonl",
               "--out", base / "lumen") == 0
    assert run("train-hue", "--config", toy_config, "--corpus", corpus_dir / "manifest.jsonl",
               "--out", base / "hue") == 0
    return base


class TestRestore:
    def test_restore_deterministic_and_sized(self, toy_config, corpus_dir, trained, tmp_path):
        degraded = sorted(corpus_dir.rglob("paired_degraded/*.png"))[0]
        out1, out2 = tmp_path / "r1.png", tmp_path / "r2.png"
        for out in (out1, out2):
            code = run(
                "restore", "--config", toy_config, "--image", degraded,
                "--lumen-ckpt", trained / "lumen" / "lumen.ckpt",
                "--hue-ckpt", trained / "hue" / "hue.ckpt", "--out", out,
            )
            assert code == 0
        assert out1.read_bytes() == out2.read_bytes()
        img = load_png(out1)
        assert img.pixels.shape == (64, 64, 3)
        side = json.loads(out1.with_suffix(".json").read_text())
        assert "silk" in side and "timings_seconds" in side


class TestEvaluate:
    def test_paired_self_comparison(self, toy_config, corpus_dir, tmp_path):
        pred = sorted(corpus_dir.rglob("non_degraded/*.png"))[:3]
        pdir = tmp_path / "pred"
        pdir.mkdir()
        for p in pred:
            (pdir / p.name).write_bytes(p.read_bytes())
        out = tmp_path / "report.json"
        code = run("evaluate", "--config", toy_config, "--pred", pdir, "--ref", pdir,
                   "--mode", "paired", "--out", out)
        assert code == 0
        report = json.loads(out.read_text())
        for row in report["rows"]:
            assert row["psnr"] == "inf"
            assert row["ssim"] == pytest.approx(1.0)
            assert row["delta_colorfulness"] == 0.0
        assert out.with_suffix(".txt").exists()

    def test_unpaired_mode_emits_fid_and_set_delta_only(self, toy_config, corpus_dir, tmp_path):
        out = tmp_path / "report.json"
        code = run(
            "evaluate", "--config", toy_config,
            "--pred", f"{corpus_dir / 'manifest.jsonl'}:role=paired_degraded",
            "--ref", f"{corpus_dir / 'manifest.jsonl'}:role=non_degraded",
            "--mode", "unpaired", "--out", out,
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["rows"] == []
        assert "fid" in report["summary"] and "set_delta_colorfulness" in report["summary"]

    def test_misalignment_detected(self, toy_config, corpus_dir, tmp_path):
        pdir, rdir = tmp_path / "p", tmp_path / "r"
        pdir.mkdir(), rdir.mkdir()
        files = sorted(corpus_dir.rglob("non_degraded/*.png"))
        (pdir / "a.png").write_bytes(files[0].read_bytes())
        (rdir / "b.png").write_bytes(files[1].read_bytes())
        code = run("evaluate", "--config", toy_config, "--pred", pdir, "--ref", rdir,
                   "--mode", "paired", "--out", tmp_path / "x.json")
        assert code == 2

    def test_mask_policy_recorded(self, toy_config, corpus_dir, tmp_path):
        pred = sorted(corpus_dir.rglob("non_degraded/*.png"))[:2]
        pdir = tmp_path / "pred"
        pdir.mkdir()
        for p in pred:
            (pdir / p.name).write_bytes(p.read_bytes())
        out = tmp_path / "report.json"
        code = run("evaluate", "--config", toy_config, "--pred", pdir, "--ref", pdir,
                   "--mode", "paired", "--mask-policy", "prior_mask", "--out", out)
        assert code == 0
        assert json.loads(out.read_text())["mask_policy"] == "prior_mask"
