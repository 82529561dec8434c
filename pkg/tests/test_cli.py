import numpy as np
import pytest

from radartrl.cli import GREEN, RED, main, render_image, write_ppm
from radartrl.config import ConfigError, RunConfig
from radartrl.decode_track import read_tracks
from radartrl.geometry import OrientedBox, box_corners
from radartrl.heads_losses import round_half_away
from radartrl.scene_sim import load_dataset

TINY = """\
sequences=3
frames=7
widths=4,8,8,16
channels=8
head_hidden=8
k=4
d_pos=8
heads=2
ff_hidden=16
epochs=1
batch_size=4
train_fraction=0.67
"""


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "tiny.txt"
    cfg.write_text(TINY)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path, str(cfg)


def _run(*args):
    return main([str(a) for a in args])


def test_config_parsing_and_overrides(tmp_path):
    cfg = RunConfig.from_text("k=2 # comment\nuse_trl=false\nwidths=4,4,8,8\n")
    assert (cfg.k, cfg.use_trl, cfg.widths) == (2, False, (4, 4, 8, 8))
    assert RunConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("bogus=1")
    with pytest.raises(ConfigError, match="bad value"):
        RunConfig.from_text("k=eight")
    with pytest.raises(ConfigError):
        RunConfig(heads=5).validate()


def test_simulate_round_trip_and_determinism(workspace):
    tmp, cfg = workspace
    seqs = load_dataset(tmp / "data")
    assert len(seqs) == 3 and all(len(s) == 7 for s in seqs)
    assert _run("simulate", "--config", cfg, "--out", tmp / "again") == 0
    for a in sorted((tmp / "data").rglob("*")):
        if a.is_file():
            assert a.read_bytes() == (tmp / "again" / a.relative_to(tmp / "data")).read_bytes()
    assert "seed=0" in (tmp / "data" / "dataset.txt").read_text()


def test_simulate_zero_sequences(tmp_path):
    assert _run("simulate", "--set", "sequences=0", "--out", tmp_path / "d") == 0
    assert (tmp_path / "d" / "dataset.txt").read_text() == "sequences=0\nseed=0\n"
    assert load_dataset(tmp_path / "d") == []


def test_config_error_exits_one_without_output(tmp_path):
    out = tmp_path / "never"
    assert _run("simulate", "--set", "height=16", "--out", out) == 1
    assert _run("train", "--k", "0", "--out", out) == 1
    assert _run("train", "--config", tmp_path / "missing.txt", "--out", out) == 1
    assert not out.exists()


def test_runtime_error_exits_two(tmp_path):
    assert _run("evaluate", "--data", tmp_path / "nothing", "--out", tmp_path / "o") == 2


def test_train_evaluate_track_render(workspace):
    tmp, cfg = workspace
    data, run = tmp / "data", tmp / "run"
    assert _run("train", "--config", cfg, "--data", data, "--out", run) == 0
    assert (run / "model.ckpt").exists()
    rows = (run / "train_log.txt").read_text().splitlines()
    # 2 training sequences x 4 pairs at gap 3, batch 4 -> 2 steps
    assert len(rows) == 2 and rows[-1].startswith("epoch=0 step=2 ")
    assert "total=" in rows[-1]

    assert _run("train", "--config", cfg, "--data", data, "--out", run, "--epochs", 2, "--resume") == 0
    rows = (run / "train_log.txt").read_text().splitlines()
    assert [r.split()[1] for r in rows] == ["step=1", "step=2", "step=3", "step=4"]

    for i in range(2):
        assert _run("evaluate", "--config", cfg, "--data", data, "--out", tmp / f"ev{i}",
                    "--checkpoint", run / "model.ckpt") == 0
    first = (tmp / "ev0" / "report.txt").read_bytes()
    assert first == (tmp / "ev1" / "report.txt").read_bytes()
    assert first.startswith(b"mAP@0.3=")
    assert (tmp / "ev0" / "report.csv").read_text().startswith("mAP@0.3,mAP@0.5,mAP@0.7")

    assert _run("track", "--config", cfg, "--data", data, "--out", tmp / "tr",
                "--checkpoint", run / "model.ckpt") == 0
    assert "mota=" in (tmp / "tr" / "mot_report.txt").read_text()

    assert _run("render", "--config", cfg, "--data", data, "--out", tmp / "img", "--limit", 1,
                "--checkpoint", run / "model.ckpt") == 0
    assert len(list((tmp / "img").rglob("*.ppm"))) == 7


def test_no_trl_flag(workspace):
    tmp, cfg = workspace
    assert _run("train", "--config", cfg, "--data", tmp / "data", "--out", tmp / "abl", "--no-trl") == 0
    saved = RunConfig.from_file(tmp / "abl" / "config.txt")
    assert saved.use_trl is False


def test_incompatible_checkpoint_names_parameter(workspace, capsys):
    tmp, cfg = workspace
    assert _run("train", "--config", cfg, "--data", tmp / "data", "--out", tmp / "run") == 0
    rc = _run("evaluate", "--config", cfg, "--data", tmp / "data", "--out", tmp / "ev",
              "--checkpoint", tmp / "run" / "model.ckpt", "--set", "channels=16")
    assert rc == 2
    assert "backbone." in capsys.readouterr().err


def test_oracle_evaluate_and_track(workspace):
    tmp, cfg = workspace
    data = tmp / "data"
    assert _run("evaluate", "--config", cfg, "--data", data, "--out", tmp / "o", "--oracle", "--split", "all") == 0
    text = (tmp / "o" / "report.txt").read_text()
    assert "mAP@0.3=1.000000\nmAP@0.5=1.000000\nmAP@0.7=1.000000\n" in text

    assert _run("track", "--config", cfg, "--data", data, "--out", tmp / "t", "--oracle", "--split", "all") == 0
    report = (tmp / "t" / "mot_report.txt").read_text()
    assert "mota=1.000000" in report and "idsw=0" in report
    seqs = load_dataset(data)
    for frames in seqs:
        path = tmp / "t" / "tracks" / f"{frames[0].sequence_id}.txt"
        tracks = read_tracks(path, len(frames))
        assert [len(t) for t in tracks] == [len(f.annotations) for f in frames]

    # without motion compensation a zero distance gate breaks every moving track
    assert _run("track", "--config", cfg, "--data", data, "--out", tmp / "k0", "--oracle",
                "--split", "all", "--set", "track_k=0", "--set", "birth=0", "--set", "oracle_motion=false") == 0
    k0 = dict(line.split("=") for line in (tmp / "k0" / "mot_report.txt").read_text().splitlines())
    assert int(k0["idsw"]) > 0 and int(k0["frag"]) == 0


def test_empty_detection_set_gives_zero_map(workspace):
    tmp, cfg = workspace
    assert _run("train", "--config", cfg, "--data", tmp / "data", "--out", tmp / "run") == 0
    assert _run("evaluate", "--config", cfg, "--data", tmp / "data", "--out", tmp / "ev",
                "--checkpoint", tmp / "run" / "model.ckpt", "--set", "map_threshold=1.0") == 0
    text = (tmp / "ev" / "report.txt").read_text()
    assert "mAP@0.5=0.000000" in text and "detections=0" in text


def test_render_plain_and_gt_box(tmp_path):
    intensity = np.linspace(0, 1, 32 * 32).reshape(32, 32)
    img = render_image(intensity)
    assert np.all(img[..., 0] == img[..., 1]) and np.all(img[..., 1] == img[..., 2])
    box = OrientedBox(15.0, 14.0, 6.0, 10.0, 30.0)
    img = render_image(np.zeros((32, 32)), [box], [OrientedBox(5, 5, 2, 2)])
    for x, y in box_corners(box):
        assert tuple(img[int(round_half_away(y)), int(round_half_away(x))]) == GREEN
    assert tuple(img[4, 4]) == RED
    write_ppm(tmp_path / "a.ppm", img)
    write_ppm(tmp_path / "b.ppm", render_image(np.zeros((32, 32)), [box], [OrientedBox(5, 5, 2, 2)]))
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n32 32\n255\n") and raw == (tmp_path / "b.ppm").read_bytes()
