import csv

import pytest
import torch

from modules.budget import ComponentFlops, count_params_flops
from modules.checkpoint import CheckpointError
from modules.config import RunConfig
from modules.constants import FRAME_PATTERN
from modules.imaging import ShapeError, VideoSequence, list_frame_paths, save_image, save_video
from modules.networks import RepresentationSource, build_drpm, enhance
from modules.training import checkpoint_dir, save_components
from modules.utils import read_key_values
from modules.video_engine import enhance_video, enhance_video_dir, estimate_avg_flops, load_inference_bundle


def _frames(count: int, size: int = 16):
    torch.manual_seed(7)
    return [torch.rand(3, size, size) for _ in range(count)]


def test_four_second_stream_at_delta_fifteen_has_eight_key_frames(tiny_config, tiny_bundle) -> None:
    tiny_config.scheduler.delta_t = 15
    records = enhance_video(_frames(120, size=8), tiny_bundle, tiny_config)
    keys = [r.index for r in records if r.source is RepresentationSource.DAM]
    assert keys == list(range(0, 120, 15))
    assert [r.index for r in records] == list(range(120))


def test_untrained_propagator_reuses_the_key_frame_estimate(tiny_config, tiny_bundle) -> None:
    tiny_config.scheduler.delta_t = 4
    frames = _frames(4)
    records = enhance_video(frames, tiny_bundle, tiny_config)
    key = records[0].d_c
    for record in records[1:]:
        assert record.source is RepresentationSource.DRPM
        assert torch.equal(record.d_c, key)
        with torch.no_grad():
            expected, _ = tiny_bundle.dgem(record.input.unsqueeze(0), d_c=key.unsqueeze(0))
        assert torch.equal(record.output, expected.squeeze(0))


def test_every_frame_a_key_frame_matches_single_image_enhancement(tiny_config, tiny_bundle) -> None:
    tiny_config.scheduler.delta_t = 1
    frames = _frames(3)
    records = enhance_video(frames, tiny_bundle, tiny_config)
    for frame, record in zip(frames, records):
        with torch.no_grad():
            expected, _ = enhance(frame, tiny_bundle.generator)
        assert torch.equal(record.output, expected)


def test_stream_rejects_a_size_change(tiny_config, tiny_bundle) -> None:
    frames = _frames(2) + [torch.rand(3, 20, 20)]
    with pytest.raises(ShapeError):
        enhance_video(frames, tiny_bundle, tiny_config)


def test_empty_stream_is_rejected(tiny_config, tiny_bundle) -> None:
    with pytest.raises(ValueError):
        enhance_video([], tiny_bundle, tiny_config)


def test_average_flops_limits() -> None:
    flops = ComponentFlops(dam=800.0, dgem=100.0, drpm=10.0)
    assert estimate_avg_flops(1, flops) == 900.0
    assert estimate_avg_flops(10 ** 9, flops) == pytest.approx(110.0, abs=1e-3)
    values = [estimate_avg_flops(d, flops) for d in (1, 3, 5, 10, 15, 20, 30)]
    assert all(a > b for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        estimate_avg_flops(0, flops)


def test_enhance_video_dir_writes_frames_log_and_sidecar(tiny_config, tiny_bundle, tmp_path) -> None:
    source, target = tmp_path / "in", tmp_path / "out"
    save_video(VideoSequence(frames=_frames(5), frame_rate=24.0), source)
    records = enhance_video_dir(source, target, tiny_bundle, tiny_config)
    assert len(records) == 5
    assert len(list_frame_paths(target)) == 5
    assert read_key_values(target / "video.yml")["frame_rate"] == 24.0
    with open(target / "frames.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [row["source"] for row in rows] == ["DAM", "DRPM", "DRPM", "DAM", "DRPM"]
    assert all(float(row["flops"]) > 0 for row in rows)
    assert float(rows[0]["flops"]) > float(rows[1]["flops"])


def test_missing_input_directory_is_reported(tiny_config, tiny_bundle, tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        enhance_video_dir(tmp_path / "absent", tmp_path / "out", tiny_bundle, tiny_config)


def test_inference_bundle_needs_single_frame_weights(tiny_config) -> None:
    with pytest.raises(CheckpointError):
        load_inference_bundle(tiny_config)


def test_inference_bundle_without_propagator_warns(tiny_config, tiny_bundle, caplog) -> None:
    save_components(tiny_bundle, checkpoint_dir(tiny_config), ["dam", "dgem"])
    bundle = load_inference_bundle(tiny_config)
    assert "No DRPM checkpoint" in caplog.text
    for a, b in zip(bundle.dgem.state_dict().values(), tiny_bundle.dgem.state_dict().values()):
        assert torch.equal(a, b)


def test_enhance_video_dir_keeps_only_log_rows(tiny_config, tiny_bundle, tmp_path) -> None:
    source = tmp_path / "in"
    save_video(VideoSequence(frames=_frames(4)), source)
    rows = enhance_video_dir(source, tmp_path / "out", tiny_bundle, tiny_config)
    assert [row.index for row in rows] == [0, 1, 2, 3]
    for row in rows:
        assert not any(isinstance(value, torch.Tensor) for value in vars(row).values())


def test_size_change_mid_stream_keeps_rows_already_written(tiny_config, tiny_bundle, tmp_path) -> None:
    source, target = tmp_path / "in", tmp_path / "out"
    for index, frame in enumerate(_frames(3) + [torch.rand(3, 20, 20)]):
        save_image(frame, source / FRAME_PATTERN.format(index))
    with pytest.raises(ShapeError):
        enhance_video_dir(source, target, tiny_bundle, tiny_config)
    with open(target / "frames.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [int(row["index"]) for row in rows] == [0, 1, 2]
    assert len(list_frame_paths(target)) == 3


def test_average_flops_at_full_size() -> None:
    _, drpm_flops = count_params_flops(build_drpm(RunConfig()), torch.zeros(1, 16, 60))
    flops = ComponentFlops(dam=29.75e9, dgem=24.65e9, drpm=float(drpm_flops))
    deltas = (3, 5, 10, 15, 20, 30)
    values = [estimate_avg_flops(d, flops) for d in deltas]
    assert all(a > b for a, b in zip(values, values[1:]))
    expected = 24.65e9 + 29.75e9 / 15 + drpm_flops * (1 - 1 / 15)
    assert values[deltas.index(15)] == pytest.approx(expected, rel=1e-12)
    assert drpm_flops > 0
