"""Operator CLI.

A thin client over the control plane: every subcommand is argument
parsing, one facade or HTTP call, and formatting. By default commands run
against an embedded control plane on ``--state-dir``; with ``--server``
they become HTTP calls against a running service.

Exit codes are uniform: 0 success, 1 a security verdict or defense
triggered, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path

from .controlplane import ControlPlane
from .errors import (
    AttestationRejectedError,
    CcplaneError,
    ChannelError,
    MalformedBlobError,
    NotRunningError,
    ParseError,
    RootfsUnsealFailureError,
    SealFailureError,
    UnknownFaultError,
)
from .statestore import StoreLockedError

EXIT_OK = 0
EXIT_DEFENSE = 1
EXIT_USAGE = 2


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class RemoteClient:
    """Minimal HTTP client for the service API."""

    def __init__(self, base_url: str):
        self.base = base_url.rstrip("/")

    def call(self, method: str, path: str, payload: dict | None = None) -> dict:
        request = urllib.request.Request(
            self.base + path,
            data=None if payload is None else json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method=method,
        )
        try:
            with urllib.request.urlopen(request, timeout=300) as response:
                return json.loads(response.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", errors="replace")
            try:
                detail = json.loads(detail).get("detail", detail)
            except ValueError:
                pass
            code = EXIT_DEFENSE if exc.code == 409 else EXIT_USAGE
            raise CliFailure(f"{detail}", code) from exc
        except urllib.error.URLError as exc:
            raise CliFailure(f"cannot reach server: {exc.reason}", EXIT_USAGE) from exc


def _emit(result: dict, fmt: str, text_line: str | None = None) -> None:
    if fmt == "json":
        print(json.dumps(result, sort_keys=True))
    else:
        print(text_line if text_line is not None else json.dumps(result, sort_keys=True))


def _verdict_exit(info: dict) -> int:
    return EXIT_OK if info.get("result") == "ACCEPTED" else EXIT_DEFENSE


# -- embedded command bodies -------------------------------------------------


def _run_embedded(args) -> int:
    with ControlPlane(args.state_dir, seed=args.seed) as plane:
        return _dispatch(args, plane=plane, remote=None)


def _run_remote(args) -> int:
    return _dispatch(args, plane=None, remote=RemoteClient(args.server))


def _dispatch(args, plane: ControlPlane | None, remote: RemoteClient | None) -> int:
    fmt = args.format
    command = args.command

    if command == "platform":
        if args.platform_command == "create":
            if remote:
                info = remote.call(
                    "POST", "/platforms", {"profile": args.profile, "tcb_version": args.tcb}
                )
            else:
                info = plane.platform_create(args.profile, args.tcb)
            _emit(info, fmt, info["platform_id"])
            return EXIT_OK
        infos = remote.call("GET", "/platforms") if remote else plane.platform_list()
        _emit(
            {"platforms": infos},
            fmt,
            "\n".join(f"{i['platform_id']} {i['profile']} tcb={i['tcb_version']}" for i in infos),
        )
        return EXIT_OK

    if command == "deploy":
        spec_path = str(Path(args.spec).resolve())
        if remote:
            info = remote.call(
                "POST", "/deployments", {"platform_id": args.platform, "spec_path": spec_path}
            )
        else:
            info = plane.deploy_path(args.spec, args.platform)
        _emit(info, fmt, f"{info['result']} {info['reason']} {info['container_id']}")
        return _verdict_exit(info)

    if command == "attest":
        if remote:
            info = remote.call("POST", f"/deployments/{args.container_id}/attest")
        else:
            info = plane.attest(args.container_id)
        _emit(info, fmt, f"{info['result']} {info['reason']}")
        return _verdict_exit(info)

    if command == "exec":
        if remote:
            info = remote.call(
                "POST",
                f"/deployments/{args.container_id}/exec",
                {"input_hex": args.input_hex},
            )
            output_hex = info["output_hex"]
        else:
            output_hex = plane.exec_workload(
                args.container_id, bytes.fromhex(args.input_hex)
            ).hex()
        _emit({"output_hex": output_hex}, fmt, output_hex)
        return EXIT_OK

    if command == "teardown":
        if remote:
            info = remote.call("POST", f"/deployments/{args.container_id}/teardown")
        else:
            info = plane.teardown(args.container_id)
        _emit(info, fmt, info["state"])
        return EXIT_OK

    if command == "seal":
        plaintext = Path(args.infile).read_bytes()
        if remote:
            info = remote.call(
                "POST",
                f"/deployments/{args.container_id}/seal",
                {"label": args.label, "plaintext_hex": plaintext.hex()},
            )
            blob = bytes.fromhex(info["blob_hex"])
        else:
            blob = plane.seal_data(args.container_id, args.label, plaintext)
        Path(args.outfile).write_bytes(blob)
        _emit({"blob_file": args.outfile, "bytes": len(blob)}, fmt, f"sealed {len(blob)} bytes")
        return EXIT_OK

    if command == "unseal":
        blob = Path(args.infile).read_bytes()
        if remote:
            info = remote.call(
                "POST",
                f"/deployments/{args.container_id}/unseal",
                {"blob_hex": blob.hex()},
            )
            plaintext = bytes.fromhex(info["plaintext_hex"])
        else:
            plaintext = plane.unseal_data(args.container_id, blob)
        Path(args.outfile).write_bytes(plaintext)
        _emit(
            {"plaintext_file": args.outfile, "bytes": len(plaintext)},
            fmt,
            f"unsealed {len(plaintext)} bytes",
        )
        return EXIT_OK

    if command == "inject":
        if remote:
            info = remote.call(
                "POST",
                "/faults",
                {"target_id": args.target, "fault": args.fault, "value": args.value},
            )
        else:
            info = plane.inject(args.target, args.fault, args.value)
        _emit(info, fmt, f"injected {info['fault']} into {info['target']}")
        return EXIT_OK

    if command == "matrix":
        profiles = args.profiles.split(",")
        if remote:
            info = remote.call("POST", "/matrix", {"profiles": profiles, "seed": args.seed or 0})
            all_passed = info["all_passed"]
            _emit(info["report"], fmt, info["text"])
        else:
            result = plane.matrix(profiles, seed=args.seed)
            all_passed = result["all_passed"]
            if fmt == "json":
                print(result["json"])
            else:
                print(result["text"])
        return EXIT_OK if all_passed else EXIT_DEFENSE

    if command == "tcb-report":
        spec_path = str(Path(args.spec).resolve())
        if remote:
            info = remote.call("POST", "/tcb-report", {"spec_path": spec_path})
        else:
            info = plane.tcb_report(args.spec)
        ours = info["tee_in_container"]
        theirs = info["container_in_tee"]
        text = (
            f"deployment: {info['deployment']}\n"
            f"workload measurement: {info['workload_measurement']}\n"
            f"tee-in-container trusted ({ours['trusted_byte_count']} bytes): "
            f"{', '.join(ours['trusted_components'])}\n"
            f"container-in-tee trusted ({theirs['trusted_byte_count']} bytes): "
            f"{', '.join(theirs['trusted_components'])}"
        )
        _emit(info, fmt, text)
        return EXIT_OK

    if command == "bench-channel":
        if remote:
            info = remote.call("POST", "/bench/channel", {"size": args.size, "count": args.count})
            result = info["result"]
        else:
            result = json.loads(plane.bench_channel(args.size, args.count)["json"])
        _emit(result, fmt, json.dumps(result, sort_keys=True))
        return EXIT_OK

    if command == "serve":
        import uvicorn

        from .service.app import create_app

        app = create_app(args.state_dir, seed=args.seed)
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return EXIT_OK

    raise CliFailure(f"unknown command {command!r}", EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccplane", description="confidential container control plane"
    )
    parser.add_argument("--state-dir", default="./ccplane-state", help="platform registry dir")
    parser.add_argument("--seed", type=int, default=None, help="fix all randomness")
    parser.add_argument("--format", choices=("text", "json"), default="text")
    parser.add_argument("--server", default=None, help="run as a client of this service URL")
    sub = parser.add_subparsers(dest="command", required=True)

    platform = sub.add_parser("platform", help="manage simulated platforms")
    platform_sub = platform.add_subparsers(dest="platform_command", required=True)
    create = platform_sub.add_parser("create")
    create.add_argument("--profile", required=True, choices=("process", "tdx", "sev"))
    create.add_argument("--tcb", type=int, default=0)
    platform_sub.add_parser("list")

    deploy = sub.add_parser("deploy", help="deploy a container from a spec file")
    deploy.add_argument("--spec", required=True)
    deploy.add_argument("--platform", required=True, help="platform id (hex)")

    attest = sub.add_parser("attest", help="re-attest a container")
    attest.add_argument("container_id")

    exec_cmd = sub.add_parser("exec", help="run the workload stub")
    exec_cmd.add_argument("container_id")
    exec_cmd.add_argument("--input-hex", dest="input_hex", default="")

    teardown = sub.add_parser("teardown", help="stop a container")
    teardown.add_argument("container_id")

    seal = sub.add_parser("seal", help="seal a file under a container's context")
    seal.add_argument("container_id")
    seal.add_argument("--in", dest="infile", required=True)
    seal.add_argument("--out", dest="outfile", required=True)
    seal.add_argument("--label", default="operator-data")

    unseal = sub.add_parser("unseal", help="unseal a blob file")
    unseal.add_argument("container_id")
    unseal.add_argument("--in", dest="infile", required=True)
    unseal.add_argument("--out", dest="outfile", required=True)

    inject = sub.add_parser("inject", help="inject a fault")
    inject.add_argument("--target", required=True, help="platform or container id (hex)")
    inject.add_argument(
        "--fault",
        required=True,
        help="tamper-manifest | downgrade-tcb | swap-image | revoke-leaf | "
        "break-chain-signature | forge-quoting-key",
    )
    inject.add_argument("--value", type=int, default=None)

    matrix = sub.add_parser("matrix", help="run the threat-to-defense matrix")
    matrix.add_argument("--profiles", default="process,tdx,sev")

    tcb = sub.add_parser("tcb-report", help="audit what a spec trusts")
    tcb.add_argument("--spec", required=True)

    bench = sub.add_parser("bench-channel", help="channel micro-benchmark")
    bench.add_argument("--size", type=int, default=1024)
    bench.add_argument("--count", type=int, default=100)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8420)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        if args.server:
            return _run_remote(args)
        return _run_embedded(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except AttestationRejectedError as exc:
        print(f"REJECTED {exc.reason.value}", file=sys.stderr)
        return EXIT_DEFENSE
    except (
        SealFailureError,
        MalformedBlobError,
        NotRunningError,
        RootfsUnsealFailureError,
        ChannelError,
    ) as exc:
        print(f"{type(exc).__name__.removesuffix('Error')}: {exc}", file=sys.stderr)
        return EXIT_DEFENSE
    except (ParseError, UnknownFaultError, StoreLockedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CcplaneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEFENSE


if __name__ == "__main__":
    sys.exit(main())
