"""CLI surface: exit codes, output formats, state persistence, remote mode."""

from __future__ import annotations

import hashlib
import json
import socket
import threading
import time

import pytest

from ccplane.cli import main
from ccplane.measurement import PlatformProfile

from conftest import make_file_deployment


def run_cli(tmp_path, *args, fmt="json", seed=None, server=None):
    argv = ["--state-dir", str(tmp_path / "state"), "--format", fmt]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if server is not None:
        argv += ["--server", server]
    argv += list(args)
    return main(argv)


def last_json(capsys) -> dict:
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


@pytest.fixture
def workspace(tmp_path, capsys):
    """A created tdx platform plus a ready-to-deploy file tree."""
    code = run_cli(tmp_path, "platform", "create", "--profile", "tdx", "--tcb", "3")
    assert code == 0
    platform = last_json(capsys)
    spec_path = make_file_deployment(
        tmp_path / "deploy", PlatformProfile.VM_TDX, platform["vendor_root_public"], name="cli"
    )
    return tmp_path, platform, spec_path


class TestPlatformCommands:
    def test_create_prints_hex_id(self, tmp_path, capsys):
        assert run_cli(tmp_path, "platform", "create", "--profile", "tdx", "--tcb", "3", fmt="text") == 0
        out = capsys.readouterr().out.strip()
        assert len(out) == 64 and int(out, 16) >= 0

    def test_unknown_profile_exits_2(self, tmp_path):
        assert run_cli(tmp_path, "platform", "create", "--profile", "sgx9") == 2

    def test_two_creates_distinct(self, tmp_path, capsys):
        run_cli(tmp_path, "platform", "create", "--profile", "sev")
        first = last_json(capsys)["platform_id"]
        run_cli(tmp_path, "platform", "create", "--profile", "sev")
        second = last_json(capsys)["platform_id"]
        assert first != second

    def test_list_shows_created(self, tmp_path, capsys):
        run_cli(tmp_path, "platform", "create", "--profile", "process")
        created = last_json(capsys)["platform_id"]
        assert run_cli(tmp_path, "platform", "list") == 0
        listing = last_json(capsys)["platforms"]
        assert [p["platform_id"] for p in listing] == [created]


class TestDeployFlow:
    def test_honest_deploy_exit_0(self, workspace, capsys):
        tmp_path, platform, spec_path = workspace
        code = run_cli(
            tmp_path, "deploy", "--spec", str(spec_path), "--platform", platform["platform_id"]
        )
        assert code == 0
        info = last_json(capsys)
        assert info["result"] == "ACCEPTED" and info["state"] == "Running"

    def test_deploy_text_output(self, workspace, capsys):
        tmp_path, platform, spec_path = workspace
        code = run_cli(
            tmp_path, "deploy", "--spec", str(spec_path), "--platform", platform["platform_id"],
            fmt="text",
        )
        assert code == 0
        assert capsys.readouterr().out.startswith("ACCEPTED Ok ")

    def test_missing_spec_exit_2(self, workspace):
        tmp_path, platform, _ = workspace
        code = run_cli(
            tmp_path, "deploy", "--spec", str(tmp_path / "nope.json"),
            "--platform", platform["platform_id"],
        )
        assert code == 2

    def test_faulted_deploy_exit_1(self, workspace, capsys):
        tmp_path, platform, spec_path = workspace
        assert run_cli(
            tmp_path, "inject", "--target", platform["platform_id"], "--fault", "tamper-manifest"
        ) == 0
        capsys.readouterr()
        code = run_cli(
            tmp_path, "deploy", "--spec", str(spec_path), "--platform", platform["platform_id"],
            fmt="text",
        )
        assert code == 1
        assert capsys.readouterr().out.startswith("REJECTED UnknownMeasurement")


class TestContainerCommands:
    def _deployed(self, workspace, capsys) -> tuple:
        tmp_path, platform, spec_path = workspace
        run_cli(tmp_path, "deploy", "--spec", str(spec_path), "--platform", platform["platform_id"])
        return tmp_path, platform, last_json(capsys)["container_id"]

    def test_exec_hash_prefixed_echo(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        assert run_cli(tmp_path, "exec", cid, "--input-hex", "0102", fmt="text") == 0
        out = capsys.readouterr().out.strip()
        assert out == (hashlib.sha256(b"\x01\x02").digest() + b"\x01\x02").hex()

    def test_exec_empty_input(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        assert run_cli(tmp_path, "exec", cid, fmt="text") == 0
        assert capsys.readouterr().out.strip() == hashlib.sha256(b"").hexdigest()

    def test_exec_after_teardown_exit_1(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        assert run_cli(tmp_path, "teardown", cid) == 0
        capsys.readouterr()
        code = run_cli(tmp_path, "exec", cid)
        assert code == 1
        assert "NotRunning" in capsys.readouterr().err

    def test_attest_unknown_container_exit_2(self, workspace):
        tmp_path, _, _ = workspace
        assert run_cli(tmp_path, "attest", "00" * 32) == 2

    def test_attest_then_reject_after_domain_fault(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        assert run_cli(tmp_path, "attest", cid) == 0
        assert last_json(capsys)["result"] == "ACCEPTED"
        assert run_cli(tmp_path, "inject", "--target", cid, "--fault", "tamper-manifest") == 0
        code = run_cli(tmp_path, "attest", cid)
        assert code == 1
        assert last_json(capsys)["reason"] == "UnknownMeasurement"

    def test_seal_unseal_roundtrip(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        original = tmp_path / "plain.bin"
        original.write_bytes(b"operator data to persist")
        sealed = tmp_path / "sealed.blob"
        recovered = tmp_path / "recovered.bin"
        assert run_cli(tmp_path, "seal", cid, "--in", str(original), "--out", str(sealed)) == 0
        assert run_cli(tmp_path, "unseal", cid, "--in", str(sealed), "--out", str(recovered)) == 0
        assert recovered.read_bytes() == original.read_bytes()

    def test_unseal_after_manifest_change_exit_1(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        original = tmp_path / "plain.bin"
        original.write_bytes(b"bound to the old identity")
        sealed = tmp_path / "sealed.blob"
        assert run_cli(tmp_path, "seal", cid, "--in", str(original), "--out", str(sealed)) == 0
        assert run_cli(tmp_path, "inject", "--target", cid, "--fault", "tamper-manifest") == 0
        capsys.readouterr()
        code = run_cli(tmp_path, "unseal", cid, "--in", str(sealed), "--out", str(tmp_path / "x"))
        assert code == 1
        assert "SealFailure" in capsys.readouterr().err

    def test_unseal_corrupt_magic_exit_1(self, workspace, capsys):
        tmp_path, _, cid = self._deployed(workspace, capsys)
        original = tmp_path / "plain.bin"
        original.write_bytes(b"data")
        sealed = tmp_path / "sealed.blob"
        run_cli(tmp_path, "seal", cid, "--in", str(original), "--out", str(sealed))
        blob = bytearray(sealed.read_bytes())
        blob[0] ^= 0xFF
        sealed.write_bytes(bytes(blob))
        code = run_cli(tmp_path, "unseal", cid, "--in", str(sealed), "--out", str(tmp_path / "x"))
        assert code == 1
        assert "MalformedBlob" in capsys.readouterr().err


class TestInject:
    def test_invalid_fault_exit_2(self, workspace):
        tmp_path, platform, _ = workspace
        assert run_cli(
            tmp_path, "inject", "--target", platform["platform_id"], "--fault", "melt-fuses"
        ) == 2


class TestMatrixCommand:
    def test_single_profile_matrix(self, tmp_path, capsys):
        code = run_cli(tmp_path, "matrix", "--profiles", "tdx", seed=5)
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["total"] == 9 and report["passed"] == 9

    def test_seeded_matrix_reproducible(self, tmp_path, capsys):
        run_cli(tmp_path, "matrix", "--profiles", "sev", seed=6)
        first = capsys.readouterr().out
        run_cli(tmp_path, "matrix", "--profiles", "sev", seed=6)
        second = capsys.readouterr().out
        assert first == second


class TestTcbReport:
    def test_report_orders_tcb_sizes(self, workspace, capsys):
        tmp_path, _, spec_path = workspace
        assert run_cli(tmp_path, "tcb-report", "--spec", str(spec_path)) == 0
        report = last_json(capsys)
        ours = report["tee_in_container"]
        theirs = report["container_in_tee"]
        assert ours["trusted_byte_count"] < theirs["trusted_byte_count"]
        assert "container-engine" not in ours["trusted_components"]
        assert "host-agent" not in ours["trusted_components"]


class TestBenchCommand:
    def test_bench_channel(self, tmp_path, capsys):
        assert run_cli(tmp_path, "bench-channel", "--size", "256", "--count", "100") == 0
        assert last_json(capsys)["samples"] == 100


class TestSeededReproducibility:
    def test_same_seed_same_command_sequence_same_bytes(self, tmp_path, capsys):
        outputs = []
        for run in ("a", "b"):
            base = tmp_path / run
            run_cli(base, "platform", "create", "--profile", "tdx", "--tcb", "1", seed=99)
            first = capsys.readouterr().out
            run_cli(base, "platform", "create", "--profile", "sev", "--tcb", "2", seed=99)
            second = capsys.readouterr().out
            outputs.append((first, second))
        assert outputs[0] == outputs[1]
        # and within one sequence the two platforms differ
        assert outputs[0][0] != outputs[0][1]


class TestRemoteMode:
    def test_thin_client_against_live_service(self, tmp_path, capsys):
        import uvicorn

        from ccplane.service.app import create_app

        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()

        app = create_app(str(tmp_path / "server-state"))
        config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 15
        while not server.started:
            if time.time() > deadline:
                pytest.fail("uvicorn did not start")
            time.sleep(0.05)
        base_url = f"http://127.0.0.1:{port}"
        try:
            assert run_cli(tmp_path, "platform", "create", "--profile", "tdx", "--tcb", "3",
                           server=base_url) == 0
            platform = last_json(capsys)
            spec_path = make_file_deployment(
                tmp_path / "remote", PlatformProfile.VM_TDX, platform["vendor_root_public"],
                name="remote",
            )
            code = run_cli(
                tmp_path, "deploy", "--spec", str(spec_path),
                "--platform", platform["platform_id"], server=base_url,
            )
            assert code == 0
            info = last_json(capsys)
            assert info["result"] == "ACCEPTED"
            assert run_cli(tmp_path, "exec", info["container_id"], "--input-hex", "ff",
                           server=base_url, fmt="text") == 0
            out = capsys.readouterr().out.strip()
            assert out == (hashlib.sha256(b"\xff").digest() + b"\xff").hex()
        finally:
            server.should_exit = True
            thread.join(timeout=10)
