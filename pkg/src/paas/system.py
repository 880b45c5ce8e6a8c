"""Wires the platform modules together and persists CLI sessions as a command log."""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from .control_plane import REQUIRED_ENV, ControlPlane
from .core import TimeInterval
from .data_proxy import ProxyLayer
from .load_balancer import LoadBalancer
from .market import ResourceMarket, ResourceTemplate, load_catalog
from .repository import Repository


class Platform:
    def __init__(self, catalog, *, operator="operator", proxies=("proxy-0", "proxy-1"),
                 replication_factor=2, repository_root=None, journal_path=None,
                 track_inflight=False):
        self.operator = operator
        self.repository = Repository(repository_root)
        self.market = ResourceMarket(catalog)
        self.lb = LoadBalancer()
        self.layer = ProxyLayer(proxies, replication_factor, track_inflight=track_inflight)
        self.cp = ControlPlane(self.repository, self.market, self.lb, self.layer,
                               operator=operator, journal_path=journal_path)
        self.standing: dict[str, object] = {}

    def agreement_with(self, provider, rental_period=None, now=0.0):
        """The operator's standing agreement with ``provider``, negotiated on first use."""
        agr = self.standing.get(provider)
        if agr is None or not agr.rental_period.covers(now):
            period = rental_period or TimeInterval(now, now + 365 * 24 * 3600.0)
            agr = self.market.negotiate(self.operator, provider, period,
                                        purpose="service hosting", expense="per hour")
            self.standing[provider] = agr
        return agr

    def provision(self, template: ResourceTemplate, kind, *, provider=None, now=0.0):
        """Subscribe a host for a component of ``kind`` and make sure its environment fits."""
        provider = provider or sorted(self.market.providers)[0]
        agr = self.agreement_with(provider, now=now)
        host = self.market.subscribe(self.operator, template, agr, now=now)
        env = {REQUIRED_ENV[kind]}
        if not env <= host.configured_env:
            self.market.configure(host, env)
        return host


class StateDir:
    """A CLI working directory: catalog, on-disk repository, mapping journal, command log."""

    def __init__(self, path):
        self.path = Path(path)

    @property
    def commands(self):
        return self.path / "commands.jsonl"

    def init(self, catalog_path):
        self.path.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(catalog_path, self.path / "catalog.toml")
        self.commands.write_text("")

    def open(self) -> Platform:
        if not self.commands.exists():
            raise FileNotFoundError(f"{self.path} is not initialised (run `paas init`)")
        platform = Platform(load_catalog(self.path / "catalog.toml"),
                            repository_root=self.path / "repository",
                            journal_path=self.path / "mapping.jsonl")
        for line in self.commands.read_text().splitlines():
            if line.strip():
                apply_command(platform, json.loads(line))
        return platform

    def execute(self, command: dict):
        platform = self.open()
        result = apply_command(platform, command)
        if command["op"] == "upload":
            command = {**command, "component_id": result}
        with self.commands.open("a") as fh:
            fh.write(json.dumps(command, sort_keys=True) + "\n")
        return platform, result


def apply_command(platform: Platform, cmd: dict):
    op = cmd["op"]
    if op == "upload":
        # packages live in the on-disk repository already; uploads are not replayed
        if cmd.get("component_id") in platform.repository:
            return cmd["component_id"]
        return platform.repository.upload(cmd["provider"], Path(cmd["archive"]).read_bytes())
    if op == "subscribe":
        template = ResourceTemplate.from_dict(cmd["template"])
        return platform.provision(template, cmd["kind"], provider=cmd.get("provider"))
    if op == "publish":
        host = platform.market.instance(cmd["host"])
        return platform.cp.publish_basic(cmd["component"], host)
    if op == "bind":
        return platform.cp.compose(cmd["software"], cmd["data"])
    raise ValueError(f"unknown command {op!r}")
