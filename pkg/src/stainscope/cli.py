"""Command line entry points: the service plus a thin HTTP client."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

DEFAULT_URL = "http://127.0.0.1:8750"

_BACKENDS = {}


def register_backend(name: str, factory) -> None:
    """Register an external backend factory for ``serve --backend <name>``."""
    _BACKENDS[name] = factory


@click.group()
def main():
    """Explainability workbench for vision-language IHC slide analysis."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8750, show_default=True, type=int)
@click.option("--data-dir", default="./stainscope-data", show_default=True)
@click.option(
    "--backend",
    "backend_name",
    type=click.Choice(["toy", "external"]),
    default="toy",
    show_default=True,
)
@click.option("--toy-seed", default=42, show_default=True, type=int)
@click.option("--llm-url", default=None, help="Chat endpoint; omit to use the offline mock.")
@click.option("--llm-model", default="llama3", show_default=True)
@click.option("--llm-temperature", default=0.1, show_default=True, type=float)
@click.option("--llm-mock-script", default=None, help="JSON fixture of canned mock replies.")
@click.option("--frontend-dir", default=None, help="Static files to serve at /.")
def serve(
    host,
    port,
    data_dir,
    backend_name,
    toy_seed,
    llm_url,
    llm_model,
    llm_temperature,
    llm_mock_script,
    frontend_dir,
):
    """Run the HTTP service."""
    import uvicorn

    from .api import create_app
    from .promptsynth import ChatClientConfig, HttpChatClient, MockChatClient
    from .store import SessionStore
    from .toy import ToySpec, make_toy_backend
    from .workbench import Workbench

    if backend_name == "toy":
        backend = make_toy_backend(ToySpec(seed=toy_seed))
    else:
        factory = _BACKENDS.get("external")
        if factory is None:
            raise click.ClickException(
                "no external backend registered; call "
                "stainscope.cli.register_backend('external', factory) from a plug-in"
            )
        backend = factory()

    config = ChatClientConfig(
        endpoint_url=llm_url or ChatClientConfig.endpoint_url,
        model_name=llm_model,
        temperature=llm_temperature,
    )
    if llm_url:
        chat_client = HttpChatClient(config)
    elif llm_mock_script:
        chat_client = MockChatClient.from_fixture(llm_mock_script)
    else:
        chat_client = _default_mock_client()

    workbench = Workbench(SessionStore(data_dir), backend, chat_client, config)
    app = create_app(workbench)
    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")
    uvicorn.run(app, host=host, port=port)


def _default_mock_client():
    """Offline synthesizer: answers every query with a generic valid prompt."""
    from .promptsynth import MockChatClient
    from .report import FIELD_ORDER

    class _CannedClient(MockChatClient):
        def complete(self, messages):
            query = next(c for r, c in reversed(messages) if r == "user")
            return json.dumps(
                {
                    "system_prompt": (
                        "You are a pathology assistant specialized in analyzing "
                        "stained histopathology images. Analyze the provided image "
                        f"for this request: {query}. Return the findings in the "
                        "required JSON format."
                    ),
                    "notes": "Offline canned prompt; no language model was consulted.",
                    "required_json_keys": list(FIELD_ORDER),
                }
            )

    return _CannedClient()


def _request(method: str, url: str, **kwargs):
    try:
        resp = httpx.request(method, url, timeout=120, **kwargs)
    except httpx.TransportError as exc:
        raise click.ClickException(f"cannot reach service: {exc}") from exc
    if resp.status_code >= 400:
        try:
            payload = resp.json()
            raise click.ClickException(f"{payload['error']}: {payload['message']}")
        except (ValueError, KeyError):
            raise click.ClickException(f"HTTP {resp.status_code}: {resp.text[:200]}")
    return resp


@main.command()
@click.option("--url", default=DEFAULT_URL, show_default=True)
def health(url):
    """Check that the service is up."""
    click.echo(_request("GET", f"{url}/api/health").text)


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("query")
@click.option("--inpaint/--no-inpaint", default=False, show_default=True)
@click.option("--url", default=DEFAULT_URL, show_default=True)
def analyze(image, query, inpaint, url):
    """Upload a slide, synthesize the prompt and run the analysis."""
    with open(image, "rb") as fh:
        resp = _request(
            "POST",
            f"{url}/api/sessions",
            files={"image": (Path(image).name, fh, "application/octet-stream")},
            data={"query": query, "inpainting": str(inpaint).lower()},
        )
    session_id = resp.json()["id"]
    _request("POST", f"{url}/api/sessions/{session_id}/prompt")
    final = _request("POST", f"{url}/api/sessions/{session_id}/analyze").json()
    click.echo(json.dumps(final, indent=2))


@main.command()
@click.argument("session_id")
@click.argument("field")
@click.option(
    "--method",
    type=click.Choice(["gradcam", "gradcampp", "hirescam", "guided_gradcam"]),
    default="gradcam",
    show_default=True,
)
@click.option("--out", default=None, help="Write the overlay PNG here.")
@click.option("--url", default=DEFAULT_URL, show_default=True)
def explain(session_id, field, method, out, url):
    """Request a visual explanation for one report field."""
    record = _request(
        "POST",
        f"{url}/api/sessions/{session_id}/explanations",
        json={"field": field, "method": method},
    ).json()
    click.echo(json.dumps(record, indent=2))
    if out:
        png = _request(
            "GET", f"{url}/api/sessions/{session_id}/heatmaps/{record['index']}.png"
        ).content
        Path(out).write_bytes(png)
        click.echo(f"overlay written to {out}", err=True)


@main.command()
@click.option("--url", default=DEFAULT_URL, show_default=True)
def sessions(url):
    """List all sessions."""
    click.echo(json.dumps(_request("GET", f"{url}/api/sessions").json(), indent=2))


@main.command()
@click.argument("session_id")
@click.option("--url", default=DEFAULT_URL, show_default=True)
def show(session_id, url):
    """Show one session."""
    click.echo(json.dumps(_request("GET", f"{url}/api/sessions/{session_id}").json(), indent=2))


if __name__ == "__main__":
    sys.exit(main())
