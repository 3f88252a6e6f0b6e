import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from featexport.backbones import Conv4, WideResNet28x10, build_backbone, feature_width
from featexport.cli import main
from featexport.export import ExportManifest, export, list_split


@pytest.fixture(scope="module")
def image_tree(tmp_path_factory):
    """Three classes of small random images, enough rows for 2-way episodes."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for cls in ("ant", "bee", "cat"):
        sub = root / cls
        sub.mkdir()
        for i in range(6):
            arr = rng.integers(0, 255, size=(40, 48, 3), dtype=np.uint8)
            Image.fromarray(arr).save(sub / f"img_{i:02d}.png")
    return root


def run_primary_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "bayesqda.cli", *args], capture_output=True, text=True
    )


class TestBackbones:
    def test_conv4_width_at_32(self):
        model = Conv4().eval()
        assert feature_width(model, 32) == 2 * 2 * 64

    def test_conv4_width_at_84(self):
        model = Conv4().eval()
        assert feature_width(model, 84) == 5 * 5 * 64

    def test_resnet18_width(self):
        model = build_backbone("resnet18", "random")
        assert feature_width(model, 84) == 512

    def test_wrn_width(self):
        model = WideResNet28x10().eval()
        assert feature_width(model, 32) == 640

    def test_state_dict_round_trip(self, tmp_path):
        model = Conv4()
        path = tmp_path / "w.pt"
        torch.save(model.state_dict(), path)
        loaded = build_backbone("conv4", str(path))
        x = torch.zeros(1, 3, 32, 32)
        model.eval()
        assert torch.equal(model(x), loaded(x))

    def test_unknown_backbone(self):
        with pytest.raises(ValueError):
            build_backbone("vgg", "random")

    def test_missing_weights(self, tmp_path):
        with pytest.raises(OSError):
            build_backbone("conv4", str(tmp_path / "missing.pt"))


class TestListSplit:
    def test_sorted_deterministic(self, image_tree):
        classes = list_split(image_tree)
        assert [name for name, _ in classes] == ["ant", "bee", "cat"]
        for _, files in classes:
            assert files == sorted(files)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list_split(tmp_path / "nope")


class TestExport:
    def test_header_and_sidecar(self, image_tree, tmp_path):
        out = tmp_path / "feats.mqd"
        summary = export(
            ExportManifest(
                backbone="conv4", split_dir=str(image_tree), out_path=str(out),
                resize=32, batch_size=4,
            )
        )
        assert summary["rows"] == 18
        assert summary["dim"] == 256
        assert summary["classes"] == 3
        sidecar = (tmp_path / "feats.mqd.classes.txt").read_text().splitlines()
        assert sidecar == ["0\tant", "1\tbee", "2\tcat"]
        n, d = 18, 256
        assert out.stat().st_size == 21 + 4 * n * d + 4 * n

    def test_deterministic_given_weights(self, image_tree, tmp_path):
        w = tmp_path / "w.pt"
        torch.save(Conv4().state_dict(), w)
        outs = []
        for name in ("a.mqd", "b.mqd"):
            out = tmp_path / name
            export(
                ExportManifest(
                    backbone="conv4", split_dir=str(image_tree), out_path=str(out),
                    resize=32, weights=str(w),
                )
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_expect_dim_mismatch(self, image_tree, tmp_path):
        with pytest.raises(ValueError):
            export(
                ExportManifest(
                    backbone="conv4", split_dir=str(image_tree),
                    out_path=str(tmp_path / "x.mqd"), resize=32, expect_dim=999,
                )
            )

    def test_unreadable_image(self, image_tree, tmp_path):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(image_tree, broken)
        (broken / "ant" / "img_00.png").write_bytes(b"this is not a png")
        with pytest.raises(OSError):
            export(
                ExportManifest(
                    backbone="conv4", split_dir=str(broken),
                    out_path=str(tmp_path / "x.mqd"), resize=32,
                )
            )


class TestPrimaryConformance:
    def test_inspect_accepts_export(self, image_tree, tmp_path):
        out = tmp_path / "feats.mqd"
        export(
            ExportManifest(
                backbone="conv4", split_dir=str(image_tree), out_path=str(out),
                resize=32,
            )
        )
        result = run_primary_cli("inspect", str(out))
        assert result.returncode == 0, result.stderr
        assert "ok" in result.stdout
        assert "d 256" in result.stdout
        assert "classes 3" in result.stdout

    def test_end_to_end_train_and_eval(self, image_tree, tmp_path):
        out = tmp_path / "feats.mqd"
        export(
            ExportManifest(
                backbone="conv4", split_dir=str(image_tree), out_path=str(out),
                resize=32,
            )
        )
        ckpt = tmp_path / "prior.ckpt"
        trained = run_primary_cli(
            "meta-train", "--features", str(out), "--out", str(ckpt),
            "--ways", "2", "--shots", "2", "--queries", "2", "--iters", "5",
            "--seed", "0",
        )
        assert trained.returncode == 0, trained.stderr
        evaled = run_primary_cli(
            "eval", "--features", str(out), "--prior", str(ckpt),
            "--ways", "2", "--shots", "2", "--queries", "2",
            "--episodes", "10", "--seed", "1",
        )
        assert evaled.returncode == 0, evaled.stderr
        assert evaled.stdout.startswith("acc ")


class TestCli:
    def test_requires_weight_choice(self, image_tree, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main([
                "--backbone", "conv4", "--split", str(image_tree),
                "--out", str(tmp_path / "x.mqd"),
            ])

    def test_random_init_run(self, image_tree, tmp_path, capsys):
        rc = main([
            "--backbone", "conv4", "--split", str(image_tree),
            "--out", str(tmp_path / "x.mqd"), "--resize", "32", "--random-init",
        ])
        out = capsys.readouterr().out
        assert rc == 0
        assert "18 x 256" in out

    def test_missing_weights_exit_2(self, image_tree, tmp_path):
        rc = main([
            "--backbone", "conv4", "--split", str(image_tree),
            "--out", str(tmp_path / "x.mqd"), "--weights", str(tmp_path / "no.pt"),
        ])
        assert rc == 2
