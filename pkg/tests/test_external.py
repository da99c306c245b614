import io
import sys
import textwrap

import numpy as np
import pytest

from hirdiff.degradation import DegradationOp
from hirdiff.external import ExternalDenoiser, ProtocolError, decode_payload, encode_payload, serve
from hirdiff.guidance import GuidanceConfig
from hirdiff.sampler import SamplerConfig, SmoothingDenoiser, StageError, run_restoration
from hirdiff.schedule import exponential_schedule
from hirdiff.synthetic import make_scene

SERVER = f"{sys.executable} -m hirdiff.denoise_server --smooth 1.0"


def fake_server(tmp_path, body):
    """A python script that completes the handshake and then runs ``body``."""
    script = tmp_path / "srv.py"
    script.write_text(
        "import sys, time\n"
        "i, o = sys.stdin.buffer, sys.stdout.buffer\n"
        "i.readline(); o.write(b'HELLO 1\\n'); o.flush()\n" + textwrap.dedent(body)
    )
    return f"{sys.executable} {script}"


def test_payload_round_trip(rng):
    x = rng.standard_normal((3, 4, 2)).astype(np.float32).astype(np.float64)
    data = encode_payload(x)
    assert data[:4] == np.float32(x[0, 0, 0]).tobytes()
    np.testing.assert_array_equal(decode_payload(data, 3, 4, 2), x)


def test_matches_in_process_denoiser(rng):
    a_t = rng.standard_normal((9, 7, 3))
    ref = SmoothingDenoiser(1.0).predict_noise(a_t.astype(np.float32).astype(np.float64), 5, 0.3)
    with ExternalDenoiser(SERVER, timeout=30) as d:
        for _ in range(2):
            out = d.predict_noise(a_t, 5, 0.3)
            np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)


def test_full_run_through_server():
    sc = make_scene(16, 16, 8, 3, 0)
    with ExternalDenoiser(SERVER, timeout=30) as d:
        ext = run_restoration(sc.x, DegradationOp.identity(), 3, SamplerConfig(exponential_schedule(4), GuidanceConfig(strength_scale=0), d))
    loc = run_restoration(sc.x, DegradationOp.identity(), 3, SamplerConfig(exponential_schedule(4), GuidanceConfig(strength_scale=0), SmoothingDenoiser(1.0)))
    np.testing.assert_allclose(ext.x0, loc.x0, rtol=1e-3, atol=1e-3)


def test_error_reply_names_the_step(tmp_path):
    cmd = fake_server(tmp_path, "i.readline(); o.write(b'ERR out of memory\\n'); o.flush(); i.read()\n")
    with ExternalDenoiser(cmd, timeout=10) as d:
        with pytest.raises(ProtocolError, match="step 12: denoiser reported: out of memory") as err:
            d.predict_noise(np.zeros((2, 2, 1)), 12, 0.5)
    assert err.value.step == 12


def test_malformed_reply(tmp_path):
    cmd = fake_server(tmp_path, "i.readline(); o.write(b'MAYBE\\n'); o.flush(); i.read()\n")
    with ExternalDenoiser(cmd, timeout=10) as d:
        with pytest.raises(ProtocolError, match="step 3: malformed reply header 'MAYBE'"):
            d.predict_noise(np.zeros((2, 2, 1)), 3, 0.5)


def test_timeout(tmp_path):
    cmd = fake_server(tmp_path, "time.sleep(30)\n")
    d = ExternalDenoiser(cmd, timeout=0.3)
    try:
        with pytest.raises(ProtocolError, match="step 4: no reply within 0.3 s"):
            d.predict_noise(np.zeros((2, 2, 1)), 4, 0.5)
    finally:
        d._proc.kill()
        d.close()


def test_server_exit_mid_run(tmp_path):
    cmd = fake_server(tmp_path, "sys.exit(0)\n")
    with ExternalDenoiser(cmd, timeout=10) as d:
        with pytest.raises(ProtocolError, match="step 2: "):
            d.predict_noise(np.zeros((2, 2, 1)), 2, 0.5)


def test_bad_handshake(tmp_path):
    script = tmp_path / "bad.py"
    script.write_text("import sys\nsys.stdin.readline(); print('HELLO 2', flush=True)\n")
    with pytest.raises(ProtocolError, match="handshake failed"):
        ExternalDenoiser(f"{sys.executable} {script}", timeout=10)


def test_sampler_wraps_protocol_errors(tmp_path):
    cmd = fake_server(tmp_path, "i.readline(); o.write(b'ERR boom\\n'); o.flush(); i.read()\n")
    sc = make_scene(8, 8, 4, 2, 0)
    with ExternalDenoiser(cmd, timeout=10) as d:
        with pytest.raises(StageError, match="step 5") as err:
            run_restoration(sc.x, DegradationOp.identity(), 2, SamplerConfig(exponential_schedule(5), denoiser=d))
    assert err.value.step == 5


def _frames(*requests):
    buf = b"HELLO 1\n"
    for header, arr in requests:
        buf += header.encode() + encode_payload(arr)
    return io.BytesIO(buf)


def test_serve_in_process():
    out = io.BytesIO()
    a = np.ones((2, 3, 1))
    assert serve(lambda x, t, ab: 2 * x, _frames(("PREDICT 2 3 1 7 0.5\n", a)), out) == 0
    data = out.getvalue()
    assert data.startswith(b"HELLO 1\nOK\n")
    np.testing.assert_array_equal(decode_payload(data[11:], 2, 3, 1), 2 * a)


def test_serve_reports_prediction_errors():
    out = io.BytesIO()
    serve(lambda x, t, ab: x[:1], _frames(("PREDICT 2 3 1 7 0.5\n", np.ones((2, 3, 1)))), out)
    assert out.getvalue().startswith(b"HELLO 1\nERR prediction has shape")


def test_serve_rejects_wrong_version():
    out = io.BytesIO()
    assert serve(lambda *a: None, io.BytesIO(b"HELLO 9\n"), out) == 1
    assert out.getvalue().startswith(b"ERR")
