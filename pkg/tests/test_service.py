import pytest
from fastapi.testclient import TestClient

from pcvnet.service.app import app

client = TestClient(app)

MICRO = dict(
    encoder=dict(
        layers=[dict(spatial_stride=2, k_neighbors=4, mlp_widths=[8, 16])],
        input_points=16,
        input_frames=4,
        output_channels=16,
    ),
    operator=dict(d_model=8, num_heads=2, num_basis=4, max_frames=8),
    optim=dict(epochs=2, batch_size=4),
    eval_every=1,
    seed=0,
    synth=dict(samples_per_class=5, num_classes=3, points=16, frames=4, noise_sigma=0.0),
)


def micro_payload(tmp_path, **overrides):
    payload = dict(MICRO)
    payload["data_root"] = str(tmp_path / "data")
    payload["out_dir"] = str(tmp_path / "run")
    payload.update(overrides)
    return payload


@pytest.fixture()
def dataset(tmp_path):
    response = client.post("/v1/synth-data", json=micro_payload(tmp_path))
    assert response.status_code == 200, response.text
    return tmp_path


class TestHealthAndValidation:
    def test_health(self):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"

    def test_unknown_key_rejected(self, tmp_path):
        payload = micro_payload(tmp_path)
        payload["not_a_field"] = 1
        response = client.post("/v1/report", json=payload)
        assert response.status_code == 422

    def test_bad_value_rejected(self, tmp_path):
        payload = micro_payload(tmp_path, optim=dict(epochs=0))
        response = client.post("/v1/report", json=payload)
        assert response.status_code == 422


class TestJobs:
    def test_synth_data(self, tmp_path):
        response = client.post("/v1/synth-data", json=micro_payload(tmp_path))
        assert response.status_code == 200
        body = response.json()
        assert body["num_train"] == 12 and body["num_test"] == 3
        assert (tmp_path / "data" / "manifest.jsonl").exists()

    def test_report(self, tmp_path):
        response = client.post("/v1/report", json=micro_payload(tmp_path))
        assert response.status_code == 200
        body = response.json()
        assert body["param_count_total"] == (
            body["param_count_encoder"] + body["param_count_operator"]
        )

    def test_e2e_then_eval_and_diagnose(self, dataset):
        response = client.post("/v1/e2e", json=micro_payload(dataset))
        assert response.status_code == 200, response.text
        ckpt = response.json()["checkpoint_path"]
        assert ckpt is not None

        eval_payload = micro_payload(dataset, checkpoint_in=ckpt)
        response = client.post("/v1/eval", json=eval_payload)
        assert response.status_code == 200, response.text
        assert 0.0 <= response.json()["accuracy"] <= 1.0

        response = client.post("/v1/diagnose", json=eval_payload)
        assert response.status_code == 200
        assert response.json()["num_samples"] == 3

    def test_pretrain_then_probe(self, dataset):
        response = client.post("/v1/pretrain", json=micro_payload(dataset))
        assert response.status_code == 200, response.text
        ckpt = response.json()["checkpoint_path"]
        probe_payload = micro_payload(
            dataset, checkpoint_in=ckpt, out_dir=str(dataset / "probe_run")
        )
        response = client.post("/v1/probe", json=probe_payload)
        assert response.status_code == 200, response.text
        assert response.json()["best_accuracy"] is not None


class TestErrorMapping:
    def test_missing_manifest_is_data_error(self, tmp_path):
        payload = micro_payload(tmp_path)  # nothing generated
        response = client.post("/v1/pretrain", json=payload)
        assert response.status_code == 400
        body = response.json()
        assert body["category"] == "data"
        assert body["code"] == "missing_file"

    def test_missing_checkpoint_is_config_error(self, dataset):
        response = client.post("/v1/finetune", json=micro_payload(dataset))
        assert response.status_code == 400
        assert response.json()["category"] == "config"

    def test_numerical_failure_maps_to_500(self, dataset, monkeypatch):
        import torch

        import pcvnet.training as tr

        def bad_loss(cfg, model, coords, labels):
            return torch.tensor(float("nan"), requires_grad=True), {}

        monkeypatch.setattr(tr, "_loss_for_mode", bad_loss)
        response = client.post("/v1/e2e", json=micro_payload(dataset))
        assert response.status_code == 500
        assert response.json()["category"] == "numerical"
