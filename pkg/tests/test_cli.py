"""End-to-end CLI runs at toy scale, exit-code contract, and artifact
determinism."""

import numpy as np
import pytest

from physinv.cli import main
from physinv.images import read_image, write_image
from physinv.rng import stream

TOY_CONFIG = """
[dataset]
task = deblur
count = 6
supervised = false
noise_variance = 1e-4
seed = 5

[scene]
height = 8
width = 8
blob_count_min = 1
blob_count_max = 2
sigma_min = 1.0
sigma_max = 2.0

[psf]
size = 3
sigma = 1.0

[network]
channels = 3
kernel_size = 3
dropout_rate = 0.1

[train]
mode = unsupervised
epochs = 2
batch_size = 2
seed = 1
split_fraction = 0.67

[loss]
noise_variance = 0.01

[analytic]
noise_variance = 0.01
prior_variance = 1.0
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "run.cfg").write_text(TOY_CONFIG)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestGenData:
    def test_writes_dataset_and_figure(self, workdir, capsys):
        out = workdir / "toy.bpds"
        assert run("gen-data", workdir / "run.cfg", "-o", out) == 0
        assert out.exists()
        assert (workdir / "toy.samples.png").exists()
        message = capsys.readouterr().out
        assert "6 samples" in message and "deblur" in message

    def test_bad_config_key_exits_2(self, workdir, capsys):
        (workdir / "bad.cfg").write_text("[dataset]\ncount = 1\nblur = yes\n")
        assert run("gen-data", workdir / "bad.cfg", "-o", workdir / "x.bpds") == 2
        assert "dataset.blur" in capsys.readouterr().err

    def test_deterministic_bytes(self, workdir):
        a, b = workdir / "a.bpds", workdir / "b.bpds"
        run("gen-data", workdir / "run.cfg", "-o", a, "--no-figures")
        run("gen-data", workdir / "run.cfg", "-o", b, "--no-figures")
        assert a.read_bytes() == b.read_bytes()


class TestTrainCommand:
    def test_full_toy_training(self, workdir, capsys):
        ds = workdir / "toy.bpds"
        run("gen-data", workdir / "run.cfg", "-o", ds, "--no-figures")
        ckpt = workdir / "net.bpnn"
        assert run("train", workdir / "run.cfg", ds, "-o", ckpt) == 0
        assert ckpt.exists()
        history = workdir / "net.bpnn.history.tsv"
        assert history.exists()
        lines = history.read_text().strip().split("\n")
        assert len(lines) == 3  # header + 2 epochs
        assert (workdir / "net.bpnn.history.png").exists()
        assert "final total=" in capsys.readouterr().out

    def test_mode_mismatch_exits_2(self, workdir, capsys):
        ds = workdir / "toy.bpds"
        run("gen-data", workdir / "run.cfg", "-o", ds, "--no-figures")
        supervised_cfg = TOY_CONFIG.replace("mode = unsupervised", "mode = supervised")
        (workdir / "sup.cfg").write_text(supervised_cfg)
        assert run("train", workdir / "sup.cfg", ds, "-o", workdir / "x.bpnn") == 2
        assert "labeled" in capsys.readouterr().err

    def test_corrupt_dataset_exits_3(self, workdir):
        ds = workdir / "toy.bpds"
        run("gen-data", workdir / "run.cfg", "-o", ds, "--no-figures")
        data = bytearray(ds.read_bytes())
        data[-40] ^= 0xFF
        ds.write_bytes(bytes(data))
        assert run("train", workdir / "run.cfg", ds, "-o", workdir / "x.bpnn") == 3

    def test_divergent_lr_exits_4(self, workdir, capsys):
        ds = workdir / "toy.bpds"
        run("gen-data", workdir / "run.cfg", "-o", ds, "--no-figures")
        wild = TOY_CONFIG.replace("epochs = 2", "epochs = 40").replace(
            "[train]", "[train]\noptimizer = sgd\nlearning_rate = 1000.0"
        )
        (workdir / "wild.cfg").write_text(wild)
        code = run("train", workdir / "wild.cfg", ds, "-o", workdir / "x.bpnn")
        assert code == 4
        assert "epoch" in capsys.readouterr().err


class TestInferCommand:
    def make_pipeline(self, workdir):
        ds = workdir / "toy.bpds"
        run("gen-data", workdir / "run.cfg", "-o", ds, "--no-figures")
        ckpt = workdir / "net.bpnn"
        run("train", workdir / "run.cfg", ds, "-o", ckpt, "--no-figures")
        g = stream(9).standard_normal((8, 8))
        obs = workdir / "obs.bpim"
        write_image(g, obs)
        return ckpt, obs

    def test_writes_mean_variance_and_panel(self, workdir, capsys):
        ckpt, obs = self.make_pipeline(workdir)
        outdir = workdir / "out"
        assert run("infer", ckpt, obs, "-o", outdir, "--passes", 8) == 0
        mean = read_image(outdir / "obs_mean.bpim")
        var = read_image(outdir / "obs_var.bpim")
        assert mean.shape == (8, 8)
        assert (var >= 0).all()
        assert (outdir / "obs_panel.png").exists()

    def test_truth_prints_metrics(self, workdir, capsys):
        ckpt, obs = self.make_pipeline(workdir)
        truth = workdir / "truth.bpim"
        write_image(np.zeros((8, 8)), truth)
        code = run("infer", ckpt, obs, "-o", workdir / "out", "--passes", 4,
                   "--truth", truth, "--no-figures")
        assert code == 0
        out = capsys.readouterr().out
        assert "mse\tpsnr\tdelta" in out

    def test_single_pass_exits_2(self, workdir):
        ckpt, obs = self.make_pipeline(workdir)
        assert run("infer", ckpt, obs, "-o", workdir / "out", "--passes", 1) == 2

    def test_corrupt_checkpoint_exits_5(self, workdir):
        ckpt, obs = self.make_pipeline(workdir)
        data = bytearray(ckpt.read_bytes())
        data[-6] ^= 0xFF
        ckpt.write_bytes(bytes(data))
        assert run("infer", ckpt, obs, "-o", workdir / "out", "--passes", 4) == 5

    def test_determinism(self, workdir):
        ckpt, obs = self.make_pipeline(workdir)
        run("infer", ckpt, obs, "-o", workdir / "o1", "--passes", 6, "--no-figures")
        run("infer", ckpt, obs, "-o", workdir / "o2", "--passes", 6, "--no-figures")
        a = (workdir / "o1" / "obs_mean.bpim").read_bytes()
        b = (workdir / "o2" / "obs_mean.bpim").read_bytes()
        assert a == b


class TestAnalyticCommand:
    def test_identity_like_solution(self, workdir, capsys):
        # delta-PSF blur makes the posterior (g + lam*0)/(1 + lam) per pixel
        cfg = TOY_CONFIG.replace("size = 3", "size = 1")
        (workdir / "id.cfg").write_text(cfg)
        g = stream(10).standard_normal((8, 8))
        obs = workdir / "obs.bpim"
        write_image(g, obs)
        assert run("analytic-solve", workdir / "id.cfg", obs, "-o", workdir / "out") == 0
        mean = read_image(workdir / "out" / "obs_posterior_mean.bpim")
        lam = 0.01
        np.testing.assert_allclose(mean, g / (1 + lam), atol=1e-7)
        out = capsys.readouterr().out
        assert "cg_iterations" in out
        assert (workdir / "out" / "obs_posterior_panel.png").exists()

    def test_nonconverged_exits_1(self, workdir, capsys):
        tight = TOY_CONFIG.replace("[analytic]", "[analytic]\ntol = 1e-15\nmax_iter = 1")
        (workdir / "tight.cfg").write_text(tight)
        obs = workdir / "obs.bpim"
        write_image(stream(11).standard_normal((8, 8)), obs)
        code = run("analytic-solve", workdir / "tight.cfg", obs, "-o", workdir / "out")
        assert code == 1
        assert "did not converge" in capsys.readouterr().err


class TestCheckCommand:
    def test_healthy_build_passes(self, capsys):
        assert run("check", "all") == 0
        out = capsys.readouterr().out
        assert "pass" in out and "OK" in out

    def test_broken_adjoint_detected(self, capsys):
        assert run("check", "adjoint", "--break-adjoint") == 1
        out = capsys.readouterr().out
        assert "FAIL" in out


class TestMetricsCommand:
    def test_known_values(self, workdir, capsys):
        a, b = workdir / "a.bpim", workdir / "b.bpim"
        write_image(np.ones((4, 4)), a)
        write_image(np.zeros((4, 4)), b)
        assert run("metrics", a, b, "--peak", 1.0) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        mse, psnr, delta = lines[-1].split("\t")
        assert float(mse) == 1.0
        assert float(delta) == 16.0

    def test_missing_file_exits_3(self, workdir):
        assert run("metrics", workdir / "nope.bpim", workdir / "nope.bpim") == 3
