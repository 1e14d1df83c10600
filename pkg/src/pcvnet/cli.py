"""Command-line client for the training service.

Every subcommand builds a run config (config file plus flag overrides),
posts it to the service, and prints the response. By default the service
app runs in-process; pass ``--server`` to target a running instance
started with ``pcvnet serve``. Exit codes: 0 success, 2 config error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .training import RunConfig

CONFIG_EXIT, DATA_EXIT, NUMERICAL_EXIT = 2, 3, 4


class ServiceClient:
    """Posts job requests either to an in-process app or a remote server."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> httpx.Response:
        return self._client.post(path, json=payload)


def _fail(message: str, exit_code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(exit_code)


def _exit_code_for(response: httpx.Response) -> int:
    if response.status_code == 422:
        return CONFIG_EXIT
    try:
        category = response.json().get("category")
    except ValueError:
        category = None
    return {"config": CONFIG_EXIT, "data": DATA_EXIT, "numerical": NUMERICAL_EXIT}.get(
        category, 1
    )


def _error_message(response: httpx.Response) -> str:
    try:
        body = response.json()
    except ValueError:
        return response.text
    if "message" in body:
        return body["message"]
    return json.dumps(body)


def build_payload(
    config_path: str | None, overrides: tuple[str, ...], **flags
) -> dict:
    """Merge config file, --set overrides, and dedicated flags into a request."""
    raw: dict = {}
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML/JSON: {exc}")
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError("config file must contain a mapping")
            raw = loaded
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    for key, value in flags.items():
        if value is not None:
            raw[key] = value
    try:
        cfg = RunConfig(**raw)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"invalid run config: {exc}")
    return cfg.model_dump(mode="json")


def run_command(name: str, payload: dict, server: str | None, as_json: bool) -> dict:
    client = ServiceClient(server)
    response = client.post(f"/v1/{name}", payload)
    if response.status_code >= 300:
        _fail(_error_message(response), _exit_code_for(response))
    body = response.json()
    if as_json:
        click.echo(json.dumps(body, indent=2))
    return body


def common_options(fn):
    options = [
        click.option("--config", "config_path", type=str, default=None, help="YAML/JSON run config"),
        click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="dotted config override"),
        click.option("--seed", type=int, default=None),
        click.option("--out", "out_dir", type=str, default=None, help="run output directory"),
        click.option("--data-root", type=str, default=None),
        click.option("--manifest", type=str, default=None),
        click.option("--server", type=str, default=None, help="remote service URL"),
        click.option("--json", "as_json", is_flag=True, help="print the raw JSON response"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Point cloud video training pipeline."""


_TRAIN_HELP = {
    "pretrain": "Self-supervised pretraining of encoder + reconstruction head.",
    "finetune": "Train a checkpointed encoder with a fresh classification head.",
    "probe": "Train only a classification head on a frozen checkpointed encoder.",
    "e2e": "Joint supervised training: cross-entropy plus weighted matching loss.",
}


def _train_command(name: str):
    @common_options
    @click.option("--checkpoint", "checkpoint_in", type=str, default=None,
                  help="initial checkpoint (required for finetune/probe)")
    def command(config_path, overrides, seed, out_dir, data_root, manifest, server,
                as_json, checkpoint_in):
        try:
            payload = build_payload(
                config_path, overrides, seed=seed, out_dir=out_dir,
                data_root=data_root, manifest=manifest, checkpoint_in=checkpoint_in,
            )
        except ConfigError as exc:
            _fail(str(exc), CONFIG_EXIT)
        body = run_command(name, payload, server, as_json)
        if not as_json:
            click.echo(f"checkpoint: {body['checkpoint_path']}")
            click.echo(f"metrics:    {body['metrics_path']}")
            if body.get("best_accuracy") is not None:
                click.echo(f"best accuracy: {body['best_accuracy']:.4f}")
            if body.get("final_loss") is not None:
                click.echo(f"final loss: {body['final_loss']:.6f}")

    command.__name__ = name.replace("-", "_")
    command.__doc__ = _TRAIN_HELP[name]
    return command


main.command(name="pretrain")(_train_command("pretrain"))
main.command(name="finetune")(_train_command("finetune"))
main.command(name="probe")(_train_command("probe"))
main.command(name="e2e")(_train_command("e2e"))


@main.command(name="synth-data")
@common_options
@click.option("--classes", "num_classes", type=int, default=None)
@click.option("--samples-per-class", type=int, default=None)
@click.option("--train-fraction", type=float, default=None)
@click.option("--points", type=int, default=None)
@click.option("--frames", type=int, default=None)
@click.option("--noise-sigma", type=float, default=None)
def synth_data(config_path, overrides, seed, out_dir, data_root, manifest, server, as_json,
               num_classes, samples_per_class, train_fraction, points, frames, noise_sigma):
    """Generate the synthetic moving-shape dataset."""
    synth_flags = {
        "num_classes": num_classes,
        "samples_per_class": samples_per_class,
        "train_fraction": train_fraction,
        "points": points,
        "frames": frames,
        "noise_sigma": noise_sigma,
    }
    extra = tuple(
        f"synth.{key}={value}" for key, value in synth_flags.items() if value is not None
    )
    if seed is not None:
        extra += (f"synth.seed={seed}",)
    try:
        payload = build_payload(
            config_path, overrides + extra, seed=seed, data_root=data_root or out_dir,
        )
        if payload.get("synth") is None:
            from .data import SynthConfig

            payload["synth"] = SynthConfig().model_dump(mode="json")
    except ConfigError as exc:
        _fail(str(exc), CONFIG_EXIT)
    body = run_command("synth-data", payload, server, as_json)
    if not as_json:
        click.echo(
            f"wrote {body['num_train']} train / {body['num_test']} test videos "
            f"({body['num_classes']} classes) to {body['out_dir']}"
        )
        click.echo(f"manifest: {body['manifest_path']}")


@main.command(name="eval")
@common_options
@click.option("--checkpoint", "checkpoints", multiple=True, required=True,
              help="checkpoint to score; repeat for multi-seed mean/std")
@click.option("--clip-len", type=int, default=None)
def eval_cmd(config_path, overrides, seed, out_dir, data_root, manifest, server, as_json,
             checkpoints, clip_len):
    """Accuracy on the test split with uniform-cover clip voting."""
    results = []
    for ckpt in checkpoints:
        try:
            payload = build_payload(
                config_path, overrides, seed=seed, out_dir=out_dir, data_root=data_root,
                manifest=manifest, checkpoint_in=ckpt, clip_len=clip_len,
            )
        except ConfigError as exc:
            _fail(str(exc), CONFIG_EXIT)
        results.append(run_command("eval", payload, server, as_json))
    if as_json:
        return
    for ckpt, body in zip(checkpoints, results):
        click.echo(f"{ckpt}: accuracy {body['accuracy']:.4f} on {body['num_samples']} samples")
        for label, acc in body["per_class_accuracy"].items():
            click.echo(f"  class {label}: {acc:.4f}")
    if len(results) > 1:
        import statistics

        accs = [b["accuracy"] for b in results]
        click.echo(
            f"mean accuracy {statistics.mean(accs):.4f} "
            f"+/- {statistics.stdev(accs):.4f} over {len(accs)} checkpoints"
        )


@main.command(name="diagnose")
@common_options
@click.option("--checkpoint", "checkpoint_in", type=str, default=None,
              help="checkpoint to diagnose; omitted = random init baseline")
def diagnose(config_path, overrides, seed, out_dir, data_root, manifest, server, as_json,
             checkpoint_in):
    """Alignment/uniformity report over the test split."""
    try:
        payload = build_payload(
            config_path, overrides, seed=seed, data_root=data_root,
            manifest=manifest, checkpoint_in=checkpoint_in,
        )
    except ConfigError as exc:
        _fail(str(exc), CONFIG_EXIT)
    body = run_command("diagnose", payload, server, as_json)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "diagnostics.json").write_text(json.dumps(body, indent=2))
    if not as_json:
        from .losses import DiagnosticsReport

        click.echo(DiagnosticsReport(**body).format_table())


@main.command(name="report")
@common_options
def report(config_path, overrides, seed, out_dir, data_root, manifest, server, as_json):
    """Parameter counts for the configured model."""
    try:
        payload = build_payload(config_path, overrides, seed=seed)
    except ConfigError as exc:
        _fail(str(exc), CONFIG_EXIT)
    body = run_command("report", payload, server, as_json)
    if not as_json:
        click.echo(f"encoder parameters:       {body['param_count_encoder']:>12,}")
        click.echo(f"reconstructor parameters: {body['param_count_operator']:>12,}")
        click.echo(f"total parameters:         {body['param_count_total']:>12,}")


@main.command(name="serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
