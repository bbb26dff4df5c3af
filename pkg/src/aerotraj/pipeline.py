"""Stage orchestration: each stage reads declared inputs, writes declared
outputs plus a machine-readable summary (with input hashes) into the output
directory.  run_all chains the stages in pipeline order.

Stage outputs are pure functions of (inputs, config, seed); summaries only
ever reference file basenames so output trees are byte-reproducible.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io as tio
from . import plots
from .analytics import MiningConfig, class_stats, histogram, mine_parking, mine_pet, mine_ttc
from .ba import BAConfig, solve_ba
from .camera import (
    CameraFrame,
    FrameStatus,
    Intrinsics,
    RansacConfig,
    UnlocalizedError,
    localize_frame,
    smooth_pose_sequence,
)
from .config import PipelineConfig
from .geodesy import LocalFrame
from .ground import GroundFitConfig, RoadFilterConfig, filter_road_points, fit_ground
from .mesh import TriangleMesh, sample_surface
from .refine import refine_detections
from .synth import evaluate, generate, make_ba_problem, truth_from_tracks
from .tracker import TrackerConfig, run_tracker

logger = logging.getLogger(__name__)

DEFAULT_FRAME = LocalFrame(32, True, 691000.0, 5336000.0, 520.0)


class PipelineError(RuntimeError):
    pass


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise PipelineError(f"required input file is missing: {path}")
    return Path(path)


def _stage_summary(out_dir: Path, stage: str, inputs: list[Path], metrics: dict) -> dict:
    data = {"stage": stage}
    for p in inputs:
        data[f"input_sha256_{Path(p).name}"] = tio.file_sha256(p)
    data.update(metrics)
    tio.write_summary(out_dir / f"summary_{stage}.txt", data)
    return metrics


def _frame_of(path, default=DEFAULT_FRAME) -> LocalFrame:
    meta, _ = tio._read_lines(path)
    frame = tio.read_local_frame(meta, path)
    return frame if frame is not None else default


def _meta_rate(path, default: float) -> float:
    meta, _ = tio._read_lines(path)
    return float(meta.get("rate_hz", default))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def run_synth_stage(scenario_path, out_dir, cfg: PipelineConfig) -> dict:
    scenario_path = _require(Path(scenario_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = tio.read_scenario(scenario_path)
    result = generate(scenario)
    frame = scenario.local_frame
    rate = scenario.rate
    rec = cfg.recording

    result.truth.mesh.save_obj(out_dir / "mesh.obj")
    tio.write_scenario(out_dir / "scenario.txt", scenario)
    tio.write_detections(out_dir / "detections.txt", result.detections, frame, rate, rec)
    tio.write_correspondences(out_dir / "correspondences.txt", result.correspondences, frame, rate, rec)
    tio.write_gps_tags(out_dir / "gps_tags.txt", result.gps_tags, frame, rate, rec)
    K = scenario.camera
    tio.write_summary(
        out_dir / "camera.txt",
        {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
         "width": K.width, "height": K.height, "rate": rate},
    )
    problem, _ = make_ba_problem(
        scenario,
        pixel_noise=scenario.noise.pixel_sigma,
        gps_noise=scenario.noise.gps_sigma,
        pose_perturbation=0.5,
        point_perturbation=0.2,
        lam=cfg.ba_lambda,
        seed=scenario.seed + 1,
    )
    tio.write_ba_problem(out_dir / "ba_problem.txt", problem, frame, rec)
    truth_records = tio.tracks_to_records(result.truth.tracks())
    tio.write_trajectories(out_dir / "truth_trajectories.txt", truth_records, frame, rate, rec)
    tio.write_poses(out_dir / "true_poses.txt", list(result.truth.frames.values()), frame, rate, rec)

    metrics = {
        "n_frames": scenario.n_frames,
        "n_detections": len(result.detections),
        "n_objects": len(scenario.objects),
        "seed": scenario.seed,
    }
    return _stage_summary(out_dir, "synth", [scenario_path], metrics)


# ---------------------------------------------------------------------------
# ba
# ---------------------------------------------------------------------------


def run_ba_stage(problem_path, out_dir, cfg: PipelineConfig) -> dict:
    problem_path = _require(Path(problem_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = tio.read_ba_problem(problem_path)
    if cfg.ba_lambda != problem.lam:
        problem.lam = cfg.ba_lambda
    refined, report = solve_ba(
        problem,
        BAConfig(max_iterations=cfg.ba_max_iterations, huber_threshold_px=cfg.ba_huber_px),
    )
    frame = _frame_of(problem_path)
    tio.write_ba_problem(out_dir / "ba_solution.txt", refined, frame, cfg.recording)
    tio.write_summary(out_dir / "ba_report.txt", report.as_dict())
    metrics = {
        "final_loss": report.final_loss,
        "final_reproj_rms": report.final_reproj_rms,
        "final_gps_rmse": report.final_gps_rmse,
        "iterations": report.iterations,
        "converged": report.converged,
    }
    return _stage_summary(out_dir, "ba", [problem_path], metrics)


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def run_calibrate_stage(correspondences_path, camera_path, out_dir, cfg: PipelineConfig) -> dict:
    correspondences_path = _require(Path(correspondences_path))
    camera_path = _require(Path(camera_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cam = tio.read_summary(camera_path)
    K = Intrinsics(
        fx=float(cam["fx"]), fy=float(cam["fy"]),
        cx=float(cam["cx"]), cy=float(cam["cy"]),
        width=int(cam["width"]), height=int(cam["height"]),
    )
    rate = float(cam.get("rate", cfg.rate))
    per_frame = tio.read_correspondences(correspondences_path)
    ransac = RansacConfig(
        max_iterations=cfg.ransac_max_iterations,
        inlier_threshold_px=cfg.ransac_inlier_threshold_px,
        confidence=cfg.ransac_confidence,
        huber_threshold_px=cfg.ransac_huber_px,
        refine_focal=cfg.ransac_refine_focal,
    )

    frames: list[CameraFrame] = []
    prev_pose = None
    shared_K = K
    n_localized = 0
    rms_values = []
    for f in sorted(per_frame):
        corr = per_frame[f]
        frame = CameraFrame(
            frame_index=f, timestamp=f / rate, intrinsics=shared_K, status=FrameStatus.UNLOCALIZED
        )
        try:
            result = localize_frame(
                corr, shared_K, init_pose=prev_pose, cfg=ransac,
                rng=np.random.default_rng([cfg.seed, f]),
            )
            frame.pose = result.pose
            frame.inlier_count = len(result.inlier_indices)
            frame.rms_reprojection = result.rms_reprojection
            frame.status = FrameStatus.LOCALIZED
            prev_pose = result.pose
            if cfg.ransac_refine_focal and n_localized == 0:
                # shared-K policy: focal refined once, on the first frame
                shared_K = result.intrinsics
            frame.intrinsics = shared_K
            n_localized += 1
            rms_values.append(result.rms_reprojection)
        except UnlocalizedError as exc:
            logger.warning("frame %d unlocalized: %s", f, exc)
        frames.append(frame)

    if n_localized == 0:
        raise PipelineError("no frame could be localized")
    smoothed = smooth_pose_sequence(
        frames,
        process_noise=cfg.pose_process_noise,
        measurement_noise=cfg.pose_measurement_noise,
        rot_process_noise=cfg.rot_process_noise,
        rot_measurement_noise=cfg.rot_measurement_noise,
    )
    frame_ref = _frame_of(correspondences_path)
    tio.write_poses(out_dir / "poses.txt", smoothed, frame_ref, rate, cfg.recording)
    metrics = {
        "n_frames": len(frames),
        "n_localized": n_localized,
        "mean_rms_px": float(np.mean(rms_values)) if rms_values else float("nan"),
    }
    return _stage_summary(out_dir, "calibrate", [correspondences_path, camera_path], metrics)


# ---------------------------------------------------------------------------
# ground
# ---------------------------------------------------------------------------


def run_ground_stage(mesh_path, out_dir, cfg: PipelineConfig) -> dict:
    mesh_path = _require(Path(mesh_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mesh = TriangleMesh.load_obj(mesh_path)
    points = sample_surface(mesh, cfg.ground_density, np.random.default_rng([cfg.seed, 97]))
    filtered = filter_road_points(
        points,
        RoadFilterConfig(
            cell_size=cfg.ground_cell_size,
            height_quantile=cfg.ground_height_quantile,
            height_band=cfg.ground_height_band,
            max_slope=cfg.ground_max_slope,
            sor_neighbors=cfg.ground_sor_neighbors,
            sor_sigma=cfg.ground_sor_sigma,
        ),
    )
    surface = fit_ground(
        filtered,
        GroundFitConfig(
            degree=cfg.ground_degree,
            control_spacing=cfg.ground_control_spacing,
            smoothing_weight=cfg.ground_smoothing_weight,
        ),
    )
    frame_ref = DEFAULT_FRAME
    tio.write_ground_surface(out_dir / "ground_surface.txt", surface, frame_ref, cfg.recording)
    z, dzdx, dzdy = surface.derivatives(filtered[:, 0], filtered[:, 1])
    rms = float(np.sqrt(np.mean((z - filtered[:, 2]) ** 2)))
    metrics = {
        "n_sampled": len(points),
        "n_road_points": len(filtered),
        "fit_rms_m": rms,
        "n_ctrl_u": surface.ctrl_z.shape[0],
        "n_ctrl_v": surface.ctrl_z.shape[1],
    }
    return _stage_summary(out_dir, "ground", [mesh_path], metrics)


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------


def run_refine_stage(detections_path, poses_path, ground_path, out_dir, cfg: PipelineConfig) -> dict:
    detections_path = _require(Path(detections_path))
    poses_path = _require(Path(poses_path))
    ground_path = _require(Path(ground_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detections = tio.read_detections(detections_path)
    frames = {f.frame_index: f for f in tio.read_poses(poses_path)}
    if str(ground_path).endswith(".obj"):
        ground = TriangleMesh.load_obj(ground_path)
    else:
        ground = tio.read_ground_surface(ground_path)
    refined = refine_detections(detections, frames, ground)
    frame_ref = _frame_of(detections_path)
    rate = _meta_rate(detections_path, cfg.rate)
    tio.write_refined(out_dir / "refined.txt", refined, frame_ref, rate, cfg.recording)
    snapped = sum(1 for r in refined if r.flag.value == "GROUND_SNAPPED")
    metrics = {
        "n_detections": len(detections),
        "n_refined": len(refined),
        "n_ground_snapped": snapped,
        "n_depth_fallback": len(refined) - snapped,
    }
    return _stage_summary(
        out_dir, "refine", [detections_path, poses_path, ground_path], metrics
    )


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def run_track_stage(refined_path, out_dir, cfg: PipelineConfig) -> dict:
    refined_path = _require(Path(refined_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refined = tio.read_refined(refined_path)
    refined.sort(key=lambda r: r.frame_index)
    rate = _meta_rate(refined_path, cfg.rate)
    tracks = run_tracker(
        refined,
        TrackerConfig(
            gate=cfg.tracker_gate,
            category_penalty=cfg.tracker_category_penalty,
            min_hits=cfg.tracker_min_hits,
            max_coast=cfg.tracker_max_coast,
            min_track_length=cfg.tracker_min_track_length,
            sigma_meas=cfg.tracker_sigma_meas,
            sigma_acc=cfg.tracker_sigma_acc,
            rate=rate,
            yaw_window=cfg.tracker_yaw_window,
        ),
    )
    frame_ref = _frame_of(refined_path)
    records = tio.tracks_to_records(tracks)
    tio.write_trajectories(out_dir / "trajectories.txt", records, frame_ref, rate, cfg.recording)
    metrics = {
        "n_tracks": len(tracks),
        "n_states": sum(len(t.states) for t in tracks),
    }
    return _stage_summary(out_dir, "track", [refined_path], metrics)


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def run_stats_stage(trajectories_path, out_dir, cfg: PipelineConfig) -> dict:
    trajectories_path = _require(Path(trajectories_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, meta = tio.read_trajectories(trajectories_path)
    rate = float(meta.get("rate_hz", cfg.rate))
    tracks = tio.records_to_tracks(records)
    stats = class_stats(tracks, rate)
    tio.write_class_stats(out_dir / "class_stats.txt", stats, cfg.recording)
    if cfg.figures and stats:
        plots.class_stats_figures(stats, out_dir)
    metrics = {
        "n_tracks": len(tracks),
        "n_classes": len(stats),
        "total_distance_m": float(sum(s.mean_distance * s.trajectory_count for s in stats)),
    }
    return _stage_summary(out_dir, "stats", [trajectories_path], metrics)


# ---------------------------------------------------------------------------
# mine
# ---------------------------------------------------------------------------


def run_mine_stage(
    trajectories_path,
    out_dir,
    cfg: PipelineConfig,
    parking_region_path=None,
    zones_path=None,
) -> dict:
    trajectories_path = _require(Path(trajectories_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, meta = tio.read_trajectories(trajectories_path)
    rate = float(meta.get("rate_hz", cfg.rate))
    tracks = tio.records_to_tracks(records)
    mining = MiningConfig(
        rate=rate,
        ttc_threshold=cfg.ttc_threshold,
        ttc_pair_distance=cfg.ttc_pair_distance,
        pet_max=cfg.pet_max,
        pet_zone_cell=cfg.pet_zone_cell,
        parking_stop_speed=cfg.parking_stop_speed,
        parking_stop_duration=cfg.parking_stop_duration,
        switch_hysteresis=cfg.switch_hysteresis,
    )
    inputs = [trajectories_path]

    events = mine_ttc(tracks, cfg.ttc_threshold, mining)
    zones = None
    if zones_path is not None:
        zones = [tio.read_polygon(zones_path)]
        inputs.append(_require(Path(zones_path)))
    pet_events = mine_pet(tracks, zones, mining)
    events.extend(pet_events)
    parking_events = []
    if parking_region_path is not None:
        region = tio.read_polygon(_require(Path(parking_region_path)))
        inputs.append(Path(parking_region_path))
        parking_events = mine_parking(tracks, region, mining)
        events.extend(parking_events)

    frame_ref = _frame_of(trajectories_path)
    tio.write_events(out_dir / "events.txt", events, frame_ref, rate, cfg.recording)

    ttc_values = [e.value for e in events if e.kind.value == "TTC"]
    pet_values = [e.value for e in events if e.kind.value == "PET"]
    ttc_hist = histogram(ttc_values, cfg.ttc_bin_width) if ttc_values else None
    pet_hist = histogram(pet_values, cfg.pet_bin_width) if pet_values else None
    if ttc_hist is not None:
        tio.write_histogram(out_dir / "ttc_hist.txt", ttc_hist, "time-to-collision [s]")
    if pet_hist is not None:
        tio.write_histogram(out_dir / "pet_hist.txt", pet_hist, "post-encroachment time [s]")
    park_time_hist = park_switch_hist = None
    if parking_events:
        park_time_hist = histogram([e.value for e in parking_events], cfg.parking_bin_width)
        park_switch_hist = histogram([e.direction_switches for e in parking_events], 1.0)
        tio.write_histogram(out_dir / "parking_time_hist.txt", park_time_hist, "time-to-park [s]")
        tio.write_histogram(out_dir / "parking_switch_hist.txt", park_switch_hist, "direction switches")
    if cfg.figures:
        plots.ttc_pet_figure(ttc_hist, pet_hist, out_dir / "ttc_pet.png")
        if parking_events:
            plots.parking_figure(park_time_hist, park_switch_hist, out_dir / "parking.png")

    metrics = {
        "n_ttc_events": len(ttc_values),
        "n_pet_events": len(pet_values),
        "n_parking_events": len(parking_events),
    }
    return _stage_summary(out_dir, "mine", inputs, metrics)


# ---------------------------------------------------------------------------
# validate + evaluate
# ---------------------------------------------------------------------------


def run_validate_stage(directory, out_dir, cfg: PipelineConfig) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise PipelineError(f"not a directory: {directory}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = tio.validate_dataset(directory)
    with open(out_dir / "validation_report.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# format: validation_report v1\n")
        for line in report.to_lines():
            fh.write(line + "\n")
    metrics = {"files_checked": report.files_checked, "n_findings": len(report.findings)}
    return _stage_summary(out_dir, "validate", [], metrics)


def run_evaluate_stage(trajectories_path, truth_path, out_dir, cfg: PipelineConfig) -> dict:
    trajectories_path = _require(Path(trajectories_path))
    truth_path = _require(Path(truth_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, _ = tio.read_trajectories(trajectories_path)
    tracks = tio.records_to_tracks(records)
    truth_records, _ = tio.read_trajectories(truth_path)
    truth = truth_from_tracks(tio.records_to_tracks(truth_records))
    report = evaluate(tracks, truth, gate=cfg.eval_gate)
    tio.write_summary(out_dir / "evaluation.txt", report.as_dict())
    return _stage_summary(out_dir, "evaluate", [trajectories_path, truth_path], report.as_dict())


# ---------------------------------------------------------------------------
# run-all
# ---------------------------------------------------------------------------


def run_all(in_dir, out_dir, cfg: PipelineConfig) -> dict:
    """ba -> calibrate -> ground -> refine -> track -> stats & mine
    (+ evaluation when the input directory carries ground truth)."""
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics: dict = {}

    metrics["ba"] = run_ba_stage(in_dir / "ba_problem.txt", out_dir, cfg)
    metrics["calibrate"] = run_calibrate_stage(
        in_dir / "correspondences.txt", in_dir / "camera.txt", out_dir, cfg
    )
    metrics["ground"] = run_ground_stage(in_dir / "mesh.obj", out_dir, cfg)
    metrics["refine"] = run_refine_stage(
        in_dir / "detections.txt", out_dir / "poses.txt", out_dir / "ground_surface.txt",
        out_dir, cfg,
    )
    metrics["track"] = run_track_stage(out_dir / "refined.txt", out_dir, cfg)
    metrics["stats"] = run_stats_stage(out_dir / "trajectories.txt", out_dir, cfg)
    parking_region = in_dir / "parking_region.txt"
    metrics["mine"] = run_mine_stage(
        out_dir / "trajectories.txt", out_dir, cfg,
        parking_region_path=parking_region if parking_region.exists() else None,
    )
    truth = in_dir / "truth_trajectories.txt"
    if truth.exists():
        metrics["evaluate"] = run_evaluate_stage(
            out_dir / "trajectories.txt", truth, out_dir, cfg
        )
    return metrics
