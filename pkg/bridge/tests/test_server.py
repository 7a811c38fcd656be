"""Live-server behavior against the engine client and raw sockets."""

import socket
import struct

import numpy as np
import pytest
import torch

import artifact

import denoiser_bridge as db


def _grid(seed: int, shape=(3, 16, 16)) -> artifact.LatentGrid:
    rng = np.random.default_rng(seed)
    return artifact.LatentGrid(rng.standard_normal(shape).astype(np.float32))


def _raw_exchange(endpoint: str, frame: bytes) -> tuple[int, bytes, bytes]:
    """Send one frame; return (opcode, payload, bytes after the response)."""
    host, port = endpoint.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        rfile = sock.makefile("rb")
        sock.sendall(frame)
        opcode, payload = db.read_frame(rfile)
        trailing = rfile.read(1)
        rfile.close()
    return opcode, payload, trailing


class TestConformance:
    def test_engine_vectors_all_pass(self, live_server, capsys):
        results = artifact.run_conformance(live_server.endpoint)
        assert len(results) >= 5
        failures = [(name, detail) for name, ok, detail in results if not ok]
        with capsys.disabled():
            if failures:
                print(f"bridge acceptance 8: FAIL - conformance vectors failed: {failures}")
            else:
                print(
                    "bridge acceptance 8: PASS - live server passes all "
                    f"{len(results)} engine protocol vectors"
                )
        assert failures == []


class TestRequestHandling:
    def test_ping_reports_version(self, live_server):
        with artifact.ProtocolClient(live_server.endpoint) as client:
            assert client.ping() == db.PROTOCOL_VERSION

    def test_predict_eps_shape_and_determinism(self, live_server):
        latent = _grid(0, shape=(12, 8, 8))
        with artifact.ProtocolClient(live_server.endpoint) as client:
            first = client.predict_eps(latent, 181, "a cat")
            second = client.predict_eps(latent, 181, "a cat")
            other_t = client.predict_eps(latent, 901, "a cat")
        assert first.shape == latent.shape
        np.testing.assert_array_equal(first.data, second.data)
        assert not np.array_equal(first.data, other_t.data)

    def test_encode_decode_reconstruction_below_bound(self, live_server, smooth_image):
        held_out = smooth_image(1234)
        grid = artifact.LatentGrid(held_out.numpy())
        with artifact.ProtocolClient(live_server.endpoint) as client:
            latent = client.encode_image(grid)
            back = client.decode_latent(latent)
        assert latent.shape == (12, 16, 16)
        err = float(np.abs(back.data - grid.data).mean())
        assert err < db.RECONSTRUCTION_ERROR_BOUND

    def test_score_regions_map(self, live_server):
        image = np.full((3, 32, 32), -0.5, dtype=np.float32)
        image[:, :, 16:] = 0.5
        with artifact.ProtocolClient(live_server.endpoint) as client:
            scores = client.score_regions(artifact.LatentGrid(image))
        assert scores.scores.shape == (32, 32)
        assert scores.scores.max() == pytest.approx(1.0)
        peak_col = int(scores.scores.max(axis=0).argmax())
        assert 14 <= peak_col <= 18

    def test_sequential_requests_on_one_connection(self, live_server):
        with artifact.ProtocolClient(live_server.endpoint) as client:
            client.ping()
            latent = client.encode_image(_grid(2))
            client.decode_latent(latent)
            assert client.ping() == db.PROTOCOL_VERSION


class TestErrorSemantics:
    def test_model_failure_keeps_connection_open(self, live_server):
        odd = artifact.LatentGrid(np.zeros((3, 15, 15), dtype=np.float32))
        with artifact.ProtocolClient(live_server.endpoint) as client:
            opcode, payload = client.request(db.OP_ENCODE, artifact.lat_to_bytes(odd))
            assert opcode == db.OP_ERROR
            code, message = db.decode_error(payload)
            assert code == db.ERR_MODEL
            assert "even image dimensions" in message
            sock_before = client._sock
            opcode, _ = client.request(db.OP_PING, b"")
            assert opcode == db.OP_PING
            assert client._sock is sock_before  # same connection survived

    def test_shape_error_closes_connection(self, live_server):
        truncated = artifact.lat_to_bytes(_grid(3))[:-4]
        opcode, payload, trailing = _raw_exchange(
            live_server.endpoint, db.encode_frame(db.OP_ENCODE, truncated)
        )
        assert opcode == db.OP_ERROR
        assert db.decode_error(payload)[0] == db.ERR_SHAPE
        assert trailing == b""

    def test_eps_shape_contract_enforced(self, live_server):
        from artifact.protocol import encode_predict_eps

        bad = bytearray(encode_predict_eps(artifact.LatentGrid.zeros(1, 2, 2), 181, ""))
        bad[12:16] = struct.pack("<I", 9)  # width field disagrees with the data
        opcode, payload, trailing = _raw_exchange(
            live_server.endpoint, db.encode_frame(db.OP_PREDICT_EPS, bytes(bad))
        )
        assert opcode == db.OP_ERROR
        assert db.decode_error(payload)[0] == db.ERR_SHAPE
        assert trailing == b""

    def test_zero_length_frame_is_malformed_and_closes(self, live_server):
        opcode, payload, trailing = _raw_exchange(live_server.endpoint, struct.pack("<I", 0))
        assert opcode == db.OP_ERROR
        assert db.decode_error(payload)[0] == db.ERR_MALFORMED
        assert trailing == b""

    def test_oversized_frame_is_malformed_and_closes(self, live_server):
        frame = struct.pack("<I", db.MAX_FRAME_BYTES + 1)
        opcode, payload, trailing = _raw_exchange(live_server.endpoint, frame)
        assert opcode == db.OP_ERROR
        assert db.decode_error(payload)[0] == db.ERR_MALFORMED
        assert trailing == b""

    def test_unknown_opcode_is_malformed_and_closes(self, live_server):
        opcode, payload, trailing = _raw_exchange(
            live_server.endpoint, db.encode_frame(200, b"junk")
        )
        assert opcode == db.OP_ERROR
        assert db.decode_error(payload)[0] == db.ERR_MALFORMED
        assert trailing == b""


class TestRobustness:
    def test_random_blobs_never_kill_the_server(self, live_server):
        rng = np.random.default_rng(99)
        host, port = live_server.endpoint.rsplit(":", 1)
        for _ in range(30):
            blob = rng.integers(0, 256, size=int(rng.integers(0, 200)), dtype=np.uint8)
            with socket.create_connection((host, int(port)), timeout=10) as sock:
                sock.sendall(blob.tobytes())
                sock.shutdown(socket.SHUT_WR)
                sock.settimeout(10)
                while True:
                    try:
                        if not sock.recv(65536):
                            break
                    except OSError:
                        break
        with artifact.ProtocolClient(live_server.endpoint) as client:
            assert client.ping() == db.PROTOCOL_VERSION

    def test_parallel_clients_get_consistent_answers(self, live_server):
        import concurrent.futures

        latent = _grid(4, shape=(12, 8, 8))

        def roundtrip(i: int) -> np.ndarray:
            with artifact.ProtocolClient(live_server.endpoint) as client:
                return client.predict_eps(latent, 181, "shared").data

        with concurrent.futures.ThreadPoolExecutor(max_workers=6) as pool:
            outputs = list(pool.map(roundtrip, range(12)))
        for out in outputs[1:]:
            np.testing.assert_array_equal(out, outputs[0])


class TestServeHelpers:
    def test_parse_listen_addr(self):
        assert db.parse_listen_addr("127.0.0.1:7433") == ("127.0.0.1", 7433)
        with pytest.raises(ValueError, match="host:port"):
            db.parse_listen_addr("7433")
        with pytest.raises(ValueError, match="not an integer"):
            db.parse_listen_addr("localhost:http")

    def test_serve_uses_the_process_session(self):
        server = db.serve("127.0.0.1:0")
        try:
            assert server.session is db.get_session()
        finally:
            server.stop()

    def test_cli_rejects_unknown_model_id(self, capsys):
        with pytest.raises(SystemExit):
            db.entry(["--model-id", "resnet-9000"])
