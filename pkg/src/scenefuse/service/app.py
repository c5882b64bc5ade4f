"""FastAPI service wrapping the perception engine.

Besides one-shot geometry and calibration endpoints, the service hosts
long-running pipeline sessions: create one with a run config, POST frame
bundles (depth as base64 DPT1 blobs plus detections), and read back
tracks and the accumulated event list.
"""

from __future__ import annotations

import base64
import binascii
import itertools
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, jobs
from ..config import build_pipeline_config, parse_run_config
from ..errors import ConfigError, InputDataError, SceneFuseError
from ..events import Event, RecordingSink
from ..formats import DEPTH_HEADER, DEPTH_MAGIC
from ..geometry import (
    CameraIntrinsics,
    DepthMap,
    Detection2D,
    Pixel,
    Point3,
    backproject_pixel,
    project_point,
)
from ..pipeline import CameraFrame, FrameBundle, PipelineEngine
from ..registration import CorrespondenceSet, estimate_rigid
from ..tracking import Track
from . import models


class _Session:
    def __init__(self, engine: PipelineEngine, sink: RecordingSink,
                 n_cameras: int) -> None:
        self.engine = engine
        self.sink = sink
        self.n_cameras = n_cameras
        self.events: list[Event] = []
        self.frame_counter = itertools.count()
        self.last_tracks: tuple[Track, ...] = ()


def _track_body(track: Track) -> models.TrackBody:
    return models.TrackBody(
        id=track.id,
        class_id=track.class_id,
        status=track.status.value,
        pos=[track.position.x, track.position.y, track.position.z],
        vel=[track.velocity.x, track.velocity.y, track.velocity.z],
        hits=track.hits,
        misses=track.misses,
    )


def _event_body(event: Event) -> models.EventBody:
    return models.EventBody(
        kind=event.kind.value, t=event.t, track_id=event.track_id,
        ref_id=event.ref_id, payload=event.payload,
    )


def _decode_depth_b64(blob: str) -> DepthMap:
    try:
        raw = base64.b64decode(blob, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise InputDataError(f"depth blob is not valid base64: {exc}") from exc
    if len(raw) < DEPTH_HEADER.size:
        raise InputDataError("depth blob shorter than the DPT1 header")
    magic, width, height = DEPTH_HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC:
        raise InputDataError(f"bad depth magic {magic!r}")
    expected = DEPTH_HEADER.size + 4 * width * height
    if len(raw) != expected:
        raise InputDataError(
            f"depth blob: expected {expected} bytes for {width}x{height}, "
            f"found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=DEPTH_HEADER.size)
    return DepthMap(width, height, values.reshape(height, width).copy())


def create_app() -> FastAPI:
    app = FastAPI(title="scenefuse", version=__version__)
    sessions: dict[str, _Session] = {}

    @app.exception_handler(SceneFuseError)
    async def _scenefuse_error(request, exc: SceneFuseError):
        status = 422 if isinstance(exc, (ConfigError, InputDataError)) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/health", response_model=models.HealthResponse)
    def health() -> models.HealthResponse:
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/geometry/backproject", response_model=models.BackprojectResponse)
    def backproject(req: models.BackprojectRequest) -> models.BackprojectResponse:
        k = CameraIntrinsics(**req.intrinsics.model_dump())
        p = backproject_pixel(Pixel(req.pixel.u, req.pixel.v), req.depth, k)
        return models.BackprojectResponse(point=models.PointModel(x=p.x, y=p.y, z=p.z))

    @app.post("/geometry/project", response_model=models.ProjectResponse)
    def project(req: models.ProjectRequest) -> models.ProjectResponse:
        k = CameraIntrinsics(**req.intrinsics.model_dump())
        pixel, depth = project_point(Point3(req.point.x, req.point.y, req.point.z), k)
        return models.ProjectResponse(
            pixel=models.PixelModel(u=pixel.u, v=pixel.v), depth=depth,
        )

    @app.post("/registration/estimate", response_model=models.CalibrateResponse)
    def calibrate(req: models.CalibrateRequest) -> models.CalibrateResponse:
        corr = CorrespondenceSet.from_pairs(
            [(p.source, p.target) for p in req.pairs]
        )
        transform = estimate_rigid(corr)
        mapped = transform.apply(corr.source)
        rms = float(np.sqrt(np.mean(np.sum((mapped - corr.target) ** 2, axis=1))))
        return models.CalibrateResponse(
            rotation=[float(v) for v in transform.rotation.reshape(-1)],
            translation=[float(v) for v in transform.translation],
            rms_residual=rms,
        )

    @app.post("/sessions", response_model=models.SessionCreateResponse)
    def create_session(req: models.SessionCreateRequest) -> models.SessionCreateResponse:
        model = parse_run_config(req.config, source="session config")
        config = build_pipeline_config(model)
        sink = RecordingSink()
        engine = PipelineEngine(config, event_log=None, sinks=[sink])
        session_id = uuid.uuid4().hex[:12]
        sessions[session_id] = _Session(engine, sink, len(config.cameras))
        return models.SessionCreateResponse(session_id=session_id)

    def _get_session(session_id: str) -> _Session:
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return sessions[session_id]

    @app.post("/sessions/{session_id}/bundles", response_model=models.BundleResponse)
    def push_bundle(session_id: str, req: models.BundleRequest) -> models.BundleResponse:
        session = _get_session(session_id)
        frame_index = next(session.frame_counter)
        frames: dict[int, CameraFrame] = {}
        for body in req.frames:
            depth = _decode_depth_b64(body.depth_b64)
            detections = [
                Detection2D(
                    bbox=(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                    class_id=d.class_id, confidence=d.conf,
                    camera_id=body.camera_id, frame_index=frame_index,
                    timestamp=req.t,
                )
                for d in body.detections
            ]
            frames[body.camera_id] = CameraFrame(
                camera_id=body.camera_id, timestamp=req.t,
                depth=depth, detections=detections,
            )
        completeness = "full" if len(frames) == session.n_cameras else "partial"
        bundle = FrameBundle(req.t, frames, completeness)
        result = session.engine.process_bundle(bundle)
        session.events.extend(result.events)
        session.last_tracks = result.tracks
        return models.BundleResponse(
            t=req.t,
            completeness=completeness,
            objects=len(result.objects),
            dropped_detections=result.stats.dropped_detections,
            tracks=[_track_body(t) for t in result.tracks],
            events=[_event_body(e) for e in result.events],
            born=list(result.born),
            dead=list(result.dead),
        )

    @app.get("/sessions/{session_id}/tracks", response_model=models.SessionStateResponse)
    def session_tracks(session_id: str) -> models.SessionStateResponse:
        session = _get_session(session_id)
        return models.SessionStateResponse(
            session_id=session_id,
            frames_processed=session.engine.frames_processed,
            tracks=[_track_body(t) for t in session.last_tracks],
        )

    @app.get("/sessions/{session_id}/events", response_model=models.EventsResponse)
    def session_events(session_id: str) -> models.EventsResponse:
        session = _get_session(session_id)
        return models.EventsResponse(
            session_id=session_id,
            events=[_event_body(e) for e in session.events],
        )

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str) -> dict:
        _get_session(session_id)
        del sessions[session_id]
        return {"deleted": session_id}

    @app.post("/jobs/run", response_model=models.RunJobResponse)
    def job_run(req: models.ReplayJobRequest) -> models.RunJobResponse:
        summary = jobs.run_replay(req.config_path, req.input_dir, req.output_dir,
                                  realtime=req.realtime)
        return models.RunJobResponse(
            frames=summary.frames, events=summary.events,
            dropped_detections=summary.dropped_detections,
            events_path=str(summary.events_path),
            tracks_path=str(summary.tracks_path),
            stats_path=str(summary.stats_path),
        )

    @app.post("/jobs/simulate", response_model=models.RunJobResponse)
    def job_simulate(req: models.SimulateJobRequest) -> models.RunJobResponse:
        summary = jobs.run_simulation(req.scene_path, req.config_path,
                                      req.output_dir, seed=req.seed)
        return models.RunJobResponse(
            frames=summary.run.frames, events=summary.run.events,
            dropped_detections=summary.run.dropped_detections,
            events_path=str(summary.run.events_path),
            tracks_path=str(summary.run.tracks_path),
            stats_path=str(summary.run.stats_path),
        )

    @app.post("/jobs/bench", response_model=models.BenchJobResponse)
    def job_bench(req: models.BenchJobRequest) -> models.BenchJobResponse:
        report = jobs.run_benchmark(req.config_path, req.output_dir, frames=req.frames)
        return models.BenchJobResponse(
            frames_per_config=report.frames_per_config,
            results=report.to_doc()["results"],
        )

    @app.post("/jobs/accuracy", response_model=models.AccuracyJobResponse)
    def job_accuracy(req: models.AccuracyJobRequest) -> models.AccuracyJobResponse:
        summary = jobs.run_accuracy(req.output_dir, experiment_path=req.experiment_path)
        return models.AccuracyJobResponse(
            conditions=summary.conditions,
            csv_paths=[str(p) for p in summary.csv_paths],
            ppm_paths=[str(p) for p in summary.ppm_paths],
            all_green=summary.all_green,
        )

    return app


app = create_app()
