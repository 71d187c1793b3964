import pytest
import yaml
from fastapi.testclient import TestClient

from openvocab_panoptic.service import app


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    assert client.get("/health").json() == {"ok": True}


def test_run_reports_and_writes(client, perfect_manifest, tmp_path):
    resp = client.post("/run", json={"manifest": str(perfect_manifest), "output_dir": str(tmp_path / "out")})
    assert resp.status_code == 200
    body = resp.json()
    assert body["images"] == [{"name": "scene_000", "segments": 4}]
    assert body["report"]["overall"]["pq"] == 1.0
    assert (tmp_path / "out" / "scene_000.png").exists()
    assert len(body["written"]) == 4


def test_run_without_output_dir_writes_nothing(client, perfect_manifest):
    body = client.post("/run", json={"manifest": str(perfect_manifest)}).json()
    assert body["written"] == []


def test_run_overrides_disable_coat(client, biased_manifest):
    on = client.post("/run", json={"manifest": str(biased_manifest)}).json()
    off = client.post("/run", json={"manifest": str(biased_manifest),
                                    "overrides": {"coat": {"enabled": False}}}).json()
    assert on["report"]["unseen"]["pq"] == 1.0
    assert off["report"]["unseen"]["pq"] == 0.0


def test_sweep_rows(client, biased_manifest):
    resp = client.post("/sweep-gamma", json={"manifest": str(biased_manifest), "gammas": [0.0, 0.5]})
    rows = resp.json()["rows"]
    assert [r["gamma"] for r in rows] == [0.0, 0.5]
    assert rows[0]["pq_unseen"] == 0.0 and rows[1]["pq_unseen"] == 1.0


def test_eval_gt_against_itself(client, perfect_manifest):
    d = perfect_manifest.parent
    pair = {"raster": str(d / "scene_000_gt.png"), "sidecar": str(d / "scene_000_gt.json")}
    resp = client.post("/eval", json={"pred": pair, "gt": pair})
    assert resp.status_code == 200
    assert resp.json()["panoptic"]["overall"]["pq"] == 1.0


def test_missing_manifest_is_404(client, tmp_path):
    resp = client.post("/run", json={"manifest": str(tmp_path / "absent.yaml")})
    assert resp.status_code == 404
    assert "absent.yaml" in resp.json()["detail"]["error"]


def test_unknown_override_section_is_400(client, perfect_manifest):
    resp = client.post("/run", json={"manifest": str(perfect_manifest), "overrides": {"colour": {"x": 1}}})
    assert resp.status_code == 400
    assert "colour" in resp.json()["detail"]["error"]


def test_out_of_range_override_is_400(client, perfect_manifest):
    resp = client.post("/run", json={"manifest": str(perfect_manifest), "overrides": {"coat": {"gamma": 3.0}}})
    assert resp.status_code == 400


def test_sweep_without_ground_truth_is_400(client, perfect_manifest):
    text = perfect_manifest.read_text()
    no_gt = perfect_manifest.parent / "no_gt.yaml"
    raw = yaml.safe_load(text)
    for image in raw["images"]:
        image["gt"] = None
    no_gt.write_text(yaml.safe_dump(raw))
    resp = client.post("/sweep-gamma", json={"manifest": str(no_gt), "gammas": [0.0]})
    assert resp.status_code == 400


def test_eval_with_malformed_sidecar_is_400(client, perfect_manifest, tmp_path):
    d = perfect_manifest.parent
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    gt = {"raster": str(d / "scene_000_gt.png"), "sidecar": str(d / "scene_000_gt.json")}
    resp = client.post("/eval", json={"pred": {"raster": gt["raster"], "sidecar": str(bad)}, "gt": gt})
    assert resp.status_code == 400
    assert "bad.json" in resp.json()["detail"]["error"]


def test_eval_with_malformed_metadata_is_400(client, perfect_manifest, tmp_path):
    d = perfect_manifest.parent
    meta = tmp_path / "meta.json"
    meta.write_text('{"names": []}')
    gt = {"raster": str(d / "scene_000_gt.png"), "sidecar": str(d / "scene_000_gt.json")}
    resp = client.post("/eval", json={"pred": gt, "gt": gt, "vocabulary": str(meta)})
    assert resp.status_code == 400
    assert "meta.json" in resp.json()["detail"]["error"]


def test_eval_with_directory_as_sidecar_is_400(client, perfect_manifest, tmp_path):
    d = perfect_manifest.parent
    gt = {"raster": str(d / "scene_000_gt.png"), "sidecar": str(d / "scene_000_gt.json")}
    resp = client.post("/eval", json={"pred": {"raster": gt["raster"], "sidecar": str(tmp_path)}, "gt": gt})
    assert resp.status_code == 400
    assert str(tmp_path) in resp.json()["detail"]["error"]
