"""FastAPI service wrapping the control plane.

One long-running process owns the state directory; the CLI and any other
clients drive deployments over this API. Security verdicts are regular
200 responses carrying the verdict, since a REJECTED attestation is an
expected outcome, not a transport error. Usage and parse problems map to
4xx; defensive errors raised mid-operation (seal failures, channel
tampering) map to 409 with the defense name.
"""

from __future__ import annotations

import json
import os
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException

from ..controlplane import ControlPlane
from ..errors import (
    AttestationRejectedError,
    CcplaneError,
    ChannelError,
    NotRunningError,
    ParseError,
    RootfsUnsealFailureError,
    SealFailureError,
    UnknownFaultError,
)
from .models import (
    AttestResponse,
    BenchAttestRequest,
    BenchChannelRequest,
    BenchResponse,
    BenchSealRequest,
    DeployRequest,
    DeployResponse,
    ExecRequest,
    ExecResponse,
    InjectRequest,
    InjectResponse,
    MatrixRequest,
    MatrixResponse,
    PlatformCreateRequest,
    PlatformInfo,
    SealRequest,
    SealResponse,
    TcbReportRequest,
    TeardownResponse,
    UnsealRequest,
    UnsealResponse,
)

DEFAULT_STATE_DIR = os.environ.get("CCPLANE_STATE_DIR", os.path.expanduser("~/.ccplane"))


def _defense_name(exc: CcplaneError) -> str:
    return type(exc).__name__.removesuffix("Error")


def create_app(state_dir: str | None = None, seed: int | None = None) -> FastAPI:
    plane = ControlPlane(state_dir or DEFAULT_STATE_DIR, seed=seed)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        plane.close()

    app = FastAPI(title="ccplane", version="0.1.0", lifespan=lifespan)
    app.state.plane = plane

    @app.exception_handler(ParseError)
    async def _parse_error(request, exc: ParseError):
        raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/platforms", response_model=PlatformInfo)
    def platform_create(request: PlatformCreateRequest):
        try:
            return plane.platform_create(request.profile, request.tcb_version)
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/platforms", response_model=list[PlatformInfo])
    def platform_list():
        return plane.platform_list()

    @app.post("/deployments", response_model=DeployResponse)
    def deploy(request: DeployRequest):
        try:
            info = plane.deploy_path(request.spec_path, request.platform_id)
        except (ParseError, FileNotFoundError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except (RootfsUnsealFailureError, SealFailureError, ChannelError) as exc:
            raise HTTPException(status_code=409, detail=_defense_name(exc)) from exc
        return info

    @app.post("/deployments/{container_id}/attest", response_model=AttestResponse)
    def attest(container_id: str):
        try:
            return plane.attest(container_id)
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except AttestationRejectedError as exc:
            raise HTTPException(status_code=409, detail=exc.reason.value) from exc

    @app.post("/deployments/{container_id}/exec", response_model=ExecResponse)
    def exec_workload(container_id: str, request: ExecRequest):
        try:
            data = bytes.fromhex(request.input_hex)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail="input_hex is not hex") from exc
        try:
            output = plane.exec_workload(container_id, data)
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except NotRunningError as exc:
            raise HTTPException(status_code=409, detail="NotRunning") from exc
        except AttestationRejectedError as exc:
            raise HTTPException(status_code=409, detail=exc.reason.value) from exc
        except ChannelError as exc:
            raise HTTPException(status_code=409, detail=_defense_name(exc)) from exc
        return {"output_hex": output.hex()}

    @app.post("/deployments/{container_id}/teardown", response_model=TeardownResponse)
    def teardown(container_id: str):
        try:
            return plane.teardown(container_id)
        except (ParseError, ValueError, AttestationRejectedError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/deployments/{container_id}/seal", response_model=SealResponse)
    def seal_data(container_id: str, request: SealRequest):
        try:
            blob = plane.seal_data(
                container_id, request.label, bytes.fromhex(request.plaintext_hex)
            )
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except AttestationRejectedError as exc:
            raise HTTPException(status_code=409, detail=exc.reason.value) from exc
        return {"blob_hex": blob.hex()}

    @app.post("/deployments/{container_id}/unseal", response_model=UnsealResponse)
    def unseal_data(container_id: str, request: UnsealRequest):
        try:
            plaintext = plane.unseal_data(container_id, bytes.fromhex(request.blob_hex))
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except AttestationRejectedError as exc:
            raise HTTPException(status_code=409, detail=exc.reason.value) from exc
        except CcplaneError as exc:
            raise HTTPException(status_code=409, detail=_defense_name(exc)) from exc
        return {"plaintext_hex": plaintext.hex()}

    @app.post("/faults", response_model=InjectResponse)
    def inject(request: InjectRequest):
        try:
            return plane.inject(request.target_id, request.fault, request.value)
        except UnknownFaultError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except (ParseError, ValueError, AttestationRejectedError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/matrix", response_model=MatrixResponse)
    def matrix(request: MatrixRequest):
        try:
            result = plane.matrix(request.profiles, seed=request.seed)
        except ParseError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "all_passed": result["all_passed"],
            "report": json.loads(result["json"]),
            "text": result["text"],
        }

    @app.post("/tcb-report")
    def tcb_report(request: TcbReportRequest):
        try:
            return plane.tcb_report(request.spec_path)
        except (ParseError, FileNotFoundError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/bench/channel", response_model=BenchResponse)
    def bench_channel(request: BenchChannelRequest):
        try:
            return {"result": json.loads(plane.bench_channel(request.size, request.count)["json"])}
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/bench/attest", response_model=BenchResponse)
    def bench_attest(request: BenchAttestRequest):
        try:
            return {
                "result": json.loads(plane.bench_attest(request.profile, request.count)["json"])
            }
        except (ParseError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/bench/seal", response_model=BenchResponse)
    def bench_seal(request: BenchSealRequest):
        try:
            return {"result": json.loads(plane.bench_seal(request.size, request.count)["json"])}
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    return app
