import base64
import io
import json
import threading
import urllib.request
import uuid

import numpy as np
import pytest
from PIL import Image

from dragwarp.grid import mask_to_png
from dragwarp.server import make_server


@pytest.fixture(scope="module")
def server_url():
    httpd = make_server("127.0.0.1", 0, assets_dir=None, ttl_seconds=60.0, workers=2)
    port = httpd.server_address[1]
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{port}"
    httpd.shutdown()
    httpd.server_close()


def http(url, method="GET", body=None, content_type=None):
    req = urllib.request.Request(url, data=body, method=method)
    if content_type:
        req.add_header("Content-Type", content_type)
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, resp.read(), resp.headers.get("Content-Type", "")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read(), exc.headers.get("Content-Type", "")


def multipart(fields: dict[str, bytes]) -> tuple[bytes, str]:
    boundary = uuid.uuid4().hex
    chunks = []
    for name, payload in fields.items():
        chunks.append(
            f'--{boundary}\r\nContent-Disposition: form-data; name="{name}"; '
            f'filename="{name}"\r\nContent-Type: application/octet-stream\r\n\r\n'.encode()
        )
        chunks.append(payload)
        chunks.append(b"\r\n")
    chunks.append(f"--{boundary}--\r\n".encode())
    return b"".join(chunks), f"multipart/form-data; boundary={boundary}"


def sample_png(size=16) -> bytes:
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def block_mask_b64(size=16, lo=4, hi=10) -> str:
    bits = np.zeros((size, size), dtype=bool)
    bits[lo:hi, lo:hi] = True
    return base64.b64encode(mask_to_png(type("M", (), {"bits": bits})())).decode()


def create_session(server_url) -> dict:
    body, ctype = multipart({"image": sample_png()})
    status, payload, _ = http(f"{server_url}/api/session", "POST", body, ctype)
    assert status == 200
    return json.loads(payload)


def test_healthz(server_url):
    status, body, _ = http(f"{server_url}/healthz")
    assert status == 200 and body == b"ok"


def test_session_upload_reports_shape(server_url):
    info = create_session(server_url)
    assert set(info) == {"id", "h", "w"}
    assert (info["h"], info["w"]) == (16, 16)


def test_warp_unknown_session_404(server_url):
    body = json.dumps({"id": "missing", "drags": {}}).encode()
    status, payload, ctype = http(f"{server_url}/api/warp", "POST", body, "application/json")
    assert status == 404
    assert "application/json" in ctype
    assert json.loads(payload)["error"] == "no_such_session"


def test_warp_null_drag_returns_original_pixels(server_url):
    info = create_session(server_url)
    drags = {
        "pairs": [{"handle": [6, 6], "target": [6, 6]}],
        "mask": {"png_base64": block_mask_b64()},
    }
    body = json.dumps({"id": info["id"], "drags": drags}).encode()
    status, payload, _ = http(f"{server_url}/api/warp", "POST", body, "application/json")
    assert status == 200
    result = json.loads(payload)
    png = base64.b64decode(result["image_png_base64"])
    original = np.asarray(Image.open(io.BytesIO(sample_png())))
    warped = np.asarray(Image.open(io.BytesIO(png)))
    assert np.array_equal(original, warped)
    d = result["diagnostics"]
    assert d["voids_filled"] == 0
    assert d["moved"] + d["static"] == 36


def test_warp_is_deterministic_per_session(server_url):
    info = create_session(server_url)
    drags = {
        "pairs": [{"handle": [6, 6], "target": [9, 7]}],
        "mask": {"png_base64": block_mask_b64()},
    }
    body = json.dumps({"id": info["id"], "drags": drags, "params": {"alpha": 1.0}}).encode()
    first = http(f"{server_url}/api/warp", "POST", body, "application/json")
    second = http(f"{server_url}/api/warp", "POST", body, "application/json")
    assert first[0] == second[0] == 200
    assert first[1] == second[1]


def test_warp_diagnostics_counts_consistent(server_url):
    info = create_session(server_url)
    drags = {
        "pairs": [{"handle": [6, 6], "target": [12, 6]}],
        "mask": {"png_base64": block_mask_b64()},
    }
    body = json.dumps({"id": info["id"], "drags": drags}).encode()
    status, payload, _ = http(f"{server_url}/api/warp", "POST", body, "application/json")
    assert status == 200
    d = json.loads(payload)["diagnostics"]
    assert all(v >= 0 for v in d.values())
    assert d["moved"] + d["static"] == 36


def test_depth_png_renders(server_url):
    info = create_session(server_url)
    status, payload, ctype = http(f"{server_url}/api/session/{info['id']}/depth.png")
    assert status == 200 and ctype == "image/png"
    img = Image.open(io.BytesIO(payload))
    assert img.size == (16, 16)


def test_malformed_bodies_get_json_errors(server_url):
    info = create_session(server_url)
    cases = [
        (b"not json at all", "application/json"),
        (json.dumps(["array"]).encode(), "application/json"),
        (json.dumps({"id": info["id"]}).encode(), "application/json"),
        (json.dumps({"id": info["id"], "drags": {"pairs": [], "mask": {}}}).encode(), "application/json"),
        (json.dumps({"id": info["id"], "drags": {"pairs": [{"handle": [0, 0], "target": [1, 1]}],
                                                   "mask": {"png_base64": "!!!notbase64"}}}).encode(),
         "application/json"),
    ]
    for body, ctype in cases:
        status, payload, rtype = http(f"{server_url}/api/warp", "POST", body, ctype)
        assert 400 <= status < 500
        assert "application/json" in rtype
        parsed = json.loads(payload)
        assert "error" in parsed and "detail" in parsed


def test_session_without_multipart_rejected(server_url):
    status, payload, _ = http(f"{server_url}/api/session", "POST", b"raw", "application/octet-stream")
    assert status == 400
    assert json.loads(payload)["error"] == "bad_request"


def test_unknown_endpoint_404(server_url):
    status, payload, _ = http(f"{server_url}/api/nothing", "POST", b"{}", "application/json")
    assert status == 404


def test_static_fallback_page(server_url):
    status, body, ctype = http(f"{server_url}/")
    assert status == 200
    assert "text/html" in ctype
    assert b"dragwarp" in body
