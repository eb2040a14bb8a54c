"""Request and response models for the control-plane HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class PlatformCreateRequest(BaseModel):
    profile: str = Field(description="process | tdx | sev")
    tcb_version: int = 0


class PlatformInfo(BaseModel):
    platform_id: str
    profile: str
    tcb_version: int
    vendor_root_public: str
    leaf_serial: int


class DeployRequest(BaseModel):
    platform_id: str
    spec_path: str


class DeployResponse(BaseModel):
    container_id: str
    state: str
    result: str
    reason: str


class AttestResponse(BaseModel):
    container_id: str
    result: str
    reason: str
    attested_public_key: str | None = None


class ExecRequest(BaseModel):
    input_hex: str = ""


class ExecResponse(BaseModel):
    output_hex: str


class TeardownResponse(BaseModel):
    container_id: str
    state: str


class SealRequest(BaseModel):
    label: str = "operator-data"
    plaintext_hex: str


class SealResponse(BaseModel):
    blob_hex: str


class UnsealRequest(BaseModel):
    blob_hex: str


class UnsealResponse(BaseModel):
    plaintext_hex: str


class InjectRequest(BaseModel):
    target_id: str
    fault: str
    value: int | None = None


class InjectResponse(BaseModel):
    target: str
    fault: str


class MatrixRequest(BaseModel):
    profiles: list[str] = ["process", "tdx", "sev"]
    seed: int = 0


class MatrixResponse(BaseModel):
    all_passed: bool
    report: dict
    text: str


class TcbReportRequest(BaseModel):
    spec_path: str


class BenchChannelRequest(BaseModel):
    size: int = 1024
    count: int = 100


class BenchAttestRequest(BaseModel):
    profile: str = "tdx"
    count: int = 100


class BenchSealRequest(BaseModel):
    size: int = 1024
    count: int = 100


class BenchResponse(BaseModel):
    result: dict
