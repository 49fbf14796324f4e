"""Command-line entry point.

Exit codes: 0 success, 1 verification false, 2 validation error,
3 eavesdropper assumption violated, 4 bind failure.

Every flag can also come from a ``VSCLUSTER_<FLAG>`` environment variable or
from a JSON config file given with ``--config``; precedence is
flag > environment > config file > built-in default.
"""

from __future__ import annotations

import json
import logging
import pathlib
import signal
import sys
import threading

import click

from . import __version__
from .channel import vsc_from_values
from .errors import (
    AssumptionViolationError,
    InsufficientObservationsError,
    ScenarioError,
    ValidationError,
)
from .hashchain import ChainDisclosure, Digest, Vin, verify_disclosure
from .kernels import sha256_iterate

EXIT_OK = 0
EXIT_FALSE = 1
EXIT_INVALID = 2
EXIT_ASSUMPTION = 3
EXIT_BIND = 4

log = logging.getLogger("vscluster")


def _load_config(ctx, param, value):
    if not value:
        return value
    try:
        with open(value, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}")
    ctx.default_map = {**(ctx.default_map or {}), **data}
    return value


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group(context_settings={"auto_envvar_prefix": "VSCLUSTER"})
@click.option("--config", type=click.Path(dir_okay=False), callback=_load_config,
              is_eager=True, expose_value=False, help="JSON file of default flag values.")
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
@click.version_option(__version__)
def cli(verbose):
    """Hash-chain secure vehicle clusters: simulator and tools."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command("run")
@click.option("--scenario", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed (u64).")
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False))
@click.option("--trace/--no-trace", default=False, help="Write trace.ndjson.")
def run_cmd(scenario, seed, out, trace):
    """Run a scenario and write metrics.json, metrics.csv and timeseries.csv."""
    from .scenario import load_scenario, place_eavesdropper_validly
    from .simulator import Simulation

    path = scenario
    try:
        scenario = load_scenario(path)
        if seed is not None:
            scenario = scenario.with_seed(seed)
        place_eavesdropper_validly(scenario)
    except OSError as exc:
        _fail(EXIT_INVALID, f"{path}: {exc.strerror}")
    except ScenarioError as exc:
        _fail(EXIT_INVALID, f"{path}: {exc}")
    except AssumptionViolationError as exc:
        _fail(EXIT_ASSUMPTION, str(exc))
    except ValidationError as exc:
        _fail(EXIT_INVALID, f"{path}: {exc}")

    sim = Simulation(scenario, trace=trace)
    metrics = sim.run()
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(metrics.dumps())
    (out / "metrics.csv").write_text(metrics.to_csv())
    (out / "timeseries.csv").write_text(metrics.timeseries_csv(scenario.tick_ms))
    if trace:
        (out / "trace.ndjson").write_text(sim.trace_ndjson())
    click.echo(json.dumps(metrics.scalars(), sort_keys=True))


@cli.group("chain")
def chain_group():
    """Hash-chain utilities."""


def _vin(text: str) -> Vin:
    try:
        return Vin(text)
    except ValidationError as exc:
        _fail(EXIT_INVALID, str(exc))


@chain_group.command("gen")
@click.option("--vin", required=True)
@click.option("--m", "m", required=True, type=click.IntRange(1, 1_000_000))
def chain_gen(vin, m):
    """Print the disclosure (H^m(VIN), m) as JSON."""
    d = ChainDisclosure(Digest(sha256_iterate(_vin(vin).to_bytes(), m)), m)
    click.echo(json.dumps(d.to_json(), sort_keys=True))


@chain_group.command("verify")
@click.option("--vin", required=True)
@click.option("--m", "m", required=True, type=click.IntRange(1, 1_000_000))
@click.option("--value", required=True, help="64-char lowercase hex digest.")
def chain_verify(vin, m, value):
    """Print true/false; exit 0 when the disclosure verifies, 1 otherwise."""
    v = _vin(vin)
    try:
        d = ChainDisclosure(Digest.fromhex(value.lower()), m)
    except ValidationError as exc:
        _fail(EXIT_INVALID, str(exc))
    ok = verify_disclosure(d, v)
    click.echo("true" if ok else "false")
    sys.exit(EXIT_OK if ok else EXIT_FALSE)


def format_vsc(value: float) -> str:
    """12 significant digits, always rendered as a float."""
    return repr(float(f"{value:.12g}"))


@cli.command("vsc")
@click.option("--snr-ab", "snr_ab", required=True, type=float, help="Linear SNR of host->target.")
@click.option("--observed", required=True, help="Comma-separated linear SNRs seen in the window.")
def vsc_cmd(snr_ab, observed):
    """Print the vehicular secrecy capacity in bits/s/Hz."""
    try:
        values = [float(x) for x in observed.split(",") if x.strip()]
        click.echo(format_vsc(vsc_from_values(snr_ab, values)))
    except InsufficientObservationsError as exc:
        _fail(EXIT_INVALID, str(exc))
    except (ValueError, ValidationError) as exc:
        _fail(EXIT_INVALID, str(exc))


@cli.command("serve")
@click.option("--bind", default="127.0.0.1", show_default=True,
              envvar=["VSCLUSTER_SERVE_BIND", "VSCLUSTER_BIND"])
@click.option("--port", default=47001, show_default=True, type=click.IntRange(0, 65535),
              envvar=["VSCLUSTER_SERVE_PORT", "VSCLUSTER_PORT"])
@click.option("--registry", type=click.Path(dir_okay=False), default=None,
              help="JSON list of VINs (or {\"vins\": [...]}) registered at startup.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--window", type=float, default=1.0, show_default=True)
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="Directory for the state flushed on shutdown.")
def serve_cmd(bind, port, registry, seed, window, out):
    """Serve the MEC clustering protocol (newline-delimited JSON over TCP)."""
    from .mec import MecServer, MecService

    service = MecService(seed=seed, window_seconds=window)
    if registry:
        try:
            with open(registry, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            vins = data["vins"] if isinstance(data, dict) else data
            for text in vins:
                service.register_vehicle(Vin(text))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            _fail(EXIT_INVALID, f"registry: {exc}")
    try:
        server = MecServer(service, bind, port)
    except OSError as exc:
        _fail(EXIT_BIND, f"cannot bind {bind}:{port}: {exc.strerror}")

    def _stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    click.echo(json.dumps({"listening": f"{server.server_address[0]}:{server.port}",
                           "registered": service.snapshot()["registered"]}), err=False)
    sys.stdout.flush()
    try:
        server.serve_forever(poll_interval=0.1)
    finally:
        server.server_close()
        if out:
            path = pathlib.Path(out)
            path.mkdir(parents=True, exist_ok=True)
            (path / "mec_state.json").write_text(json.dumps(service.snapshot(), sort_keys=True) + "\n")
        log.info("server stopped")
    sys.exit(EXIT_OK)


def main(argv=None):
    cli.main(args=argv, prog_name="vscluster")


if __name__ == "__main__":
    main()
