import numpy as np
import pytest

from mscaec.cli import main
from mscaec.metrics import ImagePlane, write_image
from mscaec.pipeline import (
    gen_synthetic_latents,
    gen_synthetic_model,
    load_tensor,
    save_tensor,
    save_weights,
)


def _parse_records(out):
    records = []
    for line in out.strip().splitlines():
        rec = {}
        for field in line.split():
            k, _, v = field.partition("=")
            rec[k] = v
        records.append(rec)
    return records


@pytest.fixture()
def workspace(tmp_path):
    weights = gen_synthetic_model(9, c_y=5, c_z=2, context_out_each=2, upsample=2)
    y, z = gen_synthetic_latents(10, weights, 2, 3)
    paths = {
        "weights": tmp_path / "model.mscw",
        "y": tmp_path / "y.msct",
        "z": tmp_path / "z.msct",
        "container": tmp_path / "img.mscb",
        "tmp": tmp_path,
    }
    save_weights(weights, str(paths["weights"]))
    save_tensor(y, str(paths["y"]))
    save_tensor(z, str(paths["z"]))
    return paths


def test_encode_decode_round_trip_via_cli(workspace, capsys):
    rc = main(
        [
            "encode",
            "--latents", str(workspace["y"]),
            "--hyper-latents", str(workspace["z"]),
            "--weights", str(workspace["weights"]),
            "--output", str(workspace["container"]),
        ]
    )
    assert rc == 0
    rec = _parse_records(capsys.readouterr().out)[0]
    assert int(rec["bytes_actual_total"]) > 0

    y_out = workspace["tmp"] / "y_out.msct"
    z_out = workspace["tmp"] / "z_out.msct"
    rc = main(
        [
            "decode",
            "--input", str(workspace["container"]),
            "--weights", str(workspace["weights"]),
            "--output-latents", str(y_out),
            "--output-hyper", str(z_out),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    assert y_out.read_bytes() == workspace["y"].read_bytes()
    assert z_out.read_bytes() == workspace["z"].read_bytes()


def test_decode_reference_context_flag(workspace, capsys):
    main(
        [
            "encode",
            "--latents", str(workspace["y"]),
            "--hyper-latents", str(workspace["z"]),
            "--weights", str(workspace["weights"]),
            "--output", str(workspace["container"]),
        ]
    )
    y_out = workspace["tmp"] / "y_ref.msct"
    z_out = workspace["tmp"] / "z_ref.msct"
    rc = main(
        [
            "decode",
            "--input", str(workspace["container"]),
            "--weights", str(workspace["weights"]),
            "--output-latents", str(y_out),
            "--output-hyper", str(z_out),
            "--reference-context",
        ]
    )
    assert rc == 0
    capsys.readouterr()
    assert y_out.read_bytes() == workspace["y"].read_bytes()


def test_estimate_reports_without_writing(workspace, capsys):
    rc = main(
        [
            "estimate",
            "--latents", str(workspace["y"]),
            "--hyper-latents", str(workspace["z"]),
            "--weights", str(workspace["weights"]),
            "--pixel-width", "64",
            "--pixel-height", "64",
        ]
    )
    assert rc == 0
    rec = _parse_records(capsys.readouterr().out)[0]
    assert float(rec["bits_total_estimate"]) > 0
    assert not (workspace["tmp"] / "img.mscb").exists()


def test_weights_env_default(workspace, capsys, monkeypatch):
    monkeypatch.setenv("MSCAEC_WEIGHTS", str(workspace["weights"]))
    rc = main(
        [
            "encode",
            "--latents", str(workspace["y"]),
            "--hyper-latents", str(workspace["z"]),
            "--output", str(workspace["container"]),
        ]
    )
    assert rc == 0
    capsys.readouterr()


def test_gen_model_cli_matches_library(workspace, capsys):
    out = workspace["tmp"] / "gen.mscw"
    rc = main(
        ["gen-model", "--seed", "9", "--c-y", "5", "--c-z", "2",
         "--context-out-each", "2", "--upsample", "2", "--output", str(out)]
    )
    assert rc == 0
    capsys.readouterr()
    assert out.read_bytes() == workspace["weights"].read_bytes()


def _image_pair(tmp_path, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(180, 180, 1)) / 255.0
    noise = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 1)
    b = np.rint(noise * 255) / 255.0
    pa, pb = tmp_path / f"a{seed}.pgm", tmp_path / f"b{seed}.pgm"
    write_image(ImagePlane(a), str(pa))
    write_image(ImagePlane(b), str(pb))
    return pa, pb


def test_metrics_default_vs_average(tmp_path, capsys):
    pa, pb = _image_pair(tmp_path, 0)
    vals = {}
    for ws in ("default", "average"):
        rc = main(["metrics", str(pa), str(pb), "--weights-set", ws])
        assert rc == 0
        rec = _parse_records(capsys.readouterr().out)[0]
        vals[ws] = float(rec["ms_ssim"])
        assert 0.0 <= vals[ws] <= 1.0
        assert rec["weights"] == ws
    assert vals["default"] != vals["average"]


def test_metrics_figure_written(tmp_path, capsys):
    pa, pb = _image_pair(tmp_path, 1)
    fig = tmp_path / "quality.png"
    rc = main(["metrics", str(pa), str(pb), "--figure", str(fig)])
    assert rc == 0
    capsys.readouterr()
    assert fig.stat().st_size > 500


def test_metrics_odd_paths_is_usage_error(tmp_path, capsys):
    pa, _ = _image_pair(tmp_path, 2)
    rc = main(["metrics", str(pa)])
    assert rc == 1
    out = capsys.readouterr().out
    assert "error=usage" in out


def test_encode_figure_written(workspace, capsys):
    fig = workspace["tmp"] / "rate.png"
    rc = main(
        [
            "encode",
            "--latents", str(workspace["y"]),
            "--hyper-latents", str(workspace["z"]),
            "--weights", str(workspace["weights"]),
            "--output", str(workspace["container"]),
            "--figure", str(fig),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    assert fig.stat().st_size > 500


def test_allocate_cli(tmp_path, capsys):
    menus = tmp_path / "menus.txt"
    menus.write_text(
        "kodim01 lo 100 0.90\nkodim01 hi 200 0.95\nkodim02 lo 80 0.88\nkodim02 hi 160 0.93\n"
    )
    fig = tmp_path / "alloc.png"
    rc = main(
        ["allocate", "--menus", str(menus), "--budget-bytes", "300",
         "--granularity", "1", "--figure", str(fig)]
    )
    assert rc == 0
    records = _parse_records(capsys.readouterr().out)
    assert records[0]["image"] == "kodim01"
    summary = records[-1]
    assert int(summary["total_bytes"]) <= 300
    assert summary["feasible"] == "1"
    assert fig.stat().st_size > 500


def test_allocate_bpp_budget(tmp_path, capsys):
    menus = tmp_path / "menus.txt"
    menus.write_text("img cand 7372 0.9721\n")
    rc = main(
        ["allocate", "--menus", str(menus), "--budget-bpp", "0.15",
         "--total-pixels", str(768 * 512)]
    )
    assert rc == 0
    records = _parse_records(capsys.readouterr().out)
    assert records[-1]["feasible"] == "1"
    assert float(records[-1]["bpp"]) <= 0.15


def test_selftest_passes(capsys):
    rc = main(["selftest", "--seed", "0", "--instances", "4"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "failures=0" in out
    assert "check=round_trip passed=4 total=4" in out


def test_missing_input_is_usage_error(tmp_path, capsys):
    rc = main(
        ["decode", "--input", str(tmp_path / "nope.mscb"), "--weights",
         str(tmp_path / "nope.mscw"), "--output-latents", "a", "--output-hyper", "b"]
    )
    assert rc == 1
    assert "error=usage" in capsys.readouterr().out


def test_corrupt_container_is_data_error(workspace, capsys):
    bad = workspace["tmp"] / "bad.mscb"
    bad.write_bytes(b"NOTMAGIC" + bytes(64))
    rc = main(
        ["decode", "--input", str(bad), "--weights", str(workspace["weights"]),
         "--output-latents", str(workspace["tmp"] / "a"),
         "--output-hyper", str(workspace["tmp"] / "b")]
    )
    assert rc == 2
    assert "error=ParseError" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    rc = main(["compress"])
    assert rc == 1
    capsys.readouterr()
