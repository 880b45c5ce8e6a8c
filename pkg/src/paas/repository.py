"""Component package store with ZIP layout validation.

A package must be a ZIP archive with a single top-level directory. Software
packages carry ``appcode/`` and ``WEB-INF/web.xml`` under that root; data
packages carry ``data/data.sql``.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (AmbiguousArchive, DuplicateComponent, LayoutViolation,
                     MalformedArchive, NotFound)

SOFTWARE = "software"
DATA = "data"


@dataclass(frozen=True)
class Classification:
    kind: str | None
    violations: tuple = ()
    root: str | None = None

    @property
    def ok(self) -> bool:
        return self.kind is not None and not self.violations


@dataclass(frozen=True)
class ComponentPackage:
    component_id: str
    provider: str
    kind: str
    root: str
    archive: bytes = field(repr=False)
    manifest: tuple
    sha256: str


def _split_roots(manifest):
    roots = set()
    for entry in manifest:
        head, sep, _ = entry.partition("/")
        # a bare file at top level is its own root and can never be a directory root
        roots.add(head + sep)
    return roots


def classify_archive(manifest: list[str]) -> Classification:
    """Decide the package kind from its entry list.

    Raises AmbiguousArchive when the manifest satisfies both layouts.
    """
    manifest = [m for m in manifest if m]
    if not manifest:
        return Classification(None, ("empty manifest",))
    roots = _split_roots(manifest)
    if len(roots) != 1:
        return Classification(None, (f"monolayer root required, found {len(roots)} top-level entries",))
    (root,) = roots
    if not root.endswith("/"):
        return Classification(None, ("monolayer root must be a directory",))

    rel = {m[len(root):] for m in manifest}
    has_appcode = any(r == "appcode/" or r.startswith("appcode/") for r in rel)
    has_webxml = "WEB-INF/web.xml" in rel or "appcode/WEB-INF/web.xml" in rel
    has_webinf = any(r.startswith("WEB-INF/") or r.startswith("appcode/WEB-INF/") for r in rel)
    has_sql = "data/data.sql" in rel
    has_datadir = any(r.startswith("data/") for r in rel)

    software = has_appcode and has_webxml
    data = has_sql
    name = root.rstrip("/")
    if software and data:
        raise AmbiguousArchive([f"{name}: matches both software and data layouts"])
    if software:
        return Classification(SOFTWARE, (), name)
    if data:
        return Classification(DATA, (), name)

    violations = []
    if has_appcode or has_webinf:
        if not has_appcode:
            violations.append("software layout: missing appcode/")
        if not has_webxml:
            violations.append("software layout: missing WEB-INF/web.xml")
    if has_datadir:
        violations.append("data layout: missing data/data.sql")
    if not violations:
        violations.append("matches neither software nor data layout")
    return Classification(None, tuple(violations), name)


def read_manifest(archive: bytes) -> list[str]:
    if not archive:
        raise MalformedArchive("empty payload")
    try:
        with zipfile.ZipFile(io.BytesIO(archive)) as zf:
            names = zf.namelist()
    except zipfile.BadZipFile as exc:
        raise MalformedArchive(str(exc)) from None
    # implicit parent directories are not always stored as entries
    return names


def validate_archive(archive: bytes) -> Classification:
    """Classify raw ZIP bytes; raises MalformedArchive or AmbiguousArchive."""
    return classify_archive(read_manifest(archive))


class Repository:
    """Stores uploaded packages, in memory or under ``root`` on disk.

    On-disk layout is ``<root>/<component_id>/package.zip`` next to a
    single-line JSON ``meta.json`` sidecar.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._packages: dict[str, ComponentPackage] = {}
        self._by_owner: dict[tuple, str] = {}
        self.registrations: dict[str, list[str]] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self):
        for meta_path in sorted(self.root.glob("*/meta.json")):
            meta = json.loads(meta_path.read_text().splitlines()[0])
            archive = (meta_path.parent / "package.zip").read_bytes()
            if hashlib.sha256(archive).hexdigest() != meta["sha256"]:
                raise MalformedArchive(f"{meta['component_id']}: hash mismatch on disk")
            self._store(ComponentPackage(
                component_id=meta["component_id"], provider=meta["provider"],
                kind=meta["kind"], root=meta["root"], archive=archive,
                manifest=tuple(read_manifest(archive)), sha256=meta["sha256"]))

    def _store(self, pkg):
        self._packages[pkg.component_id] = pkg
        self._by_owner[(pkg.provider, pkg.root)] = pkg.component_id
        self.registrations.setdefault(pkg.provider, []).append(pkg.component_id)

    def __len__(self):
        return len(self._packages)

    def __contains__(self, component_id):
        return component_id in self._packages

    def ids(self):
        return list(self._packages)

    def upload(self, provider: str, archive: bytes) -> str:
        manifest = read_manifest(archive)
        cls = classify_archive(manifest)
        if not cls.ok:
            raise LayoutViolation(cls.violations)
        if (provider, cls.root) in self._by_owner:
            raise DuplicateComponent(f"{provider} already uploaded {cls.root!r}")
        component_id = f"c{len(self._packages) + 1:04d}-{cls.root}"
        pkg = ComponentPackage(component_id=component_id, provider=provider,
                               kind=cls.kind, root=cls.root, archive=bytes(archive),
                               manifest=tuple(manifest),
                               sha256=hashlib.sha256(archive).hexdigest())
        if self.root is not None:
            d = self.root / component_id
            d.mkdir(parents=True, exist_ok=False)
            (d / "package.zip").write_bytes(pkg.archive)
            meta = {"component_id": component_id, "provider": provider,
                    "kind": pkg.kind, "root": pkg.root, "sha256": pkg.sha256}
            (d / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self._store(pkg)
        return component_id

    def fetch(self, component_id: str) -> ComponentPackage:
        try:
            return self._packages[component_id]
        except KeyError:
            raise NotFound(f"no component {component_id!r}") from None

    def verify(self, component_id: str) -> bool:
        pkg = self.fetch(component_id)
        return hashlib.sha256(pkg.archive).hexdigest() == pkg.sha256


def build_archive(entries: dict[str, bytes | str]) -> bytes:
    """Create a ZIP payload in memory; names ending in ``/`` become directories."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, content in entries.items():
            info = zipfile.ZipInfo(name, date_time=(2011, 3, 16, 15, 21, 23))
            if isinstance(content, str):
                content = content.encode()
            zf.writestr(info, b"" if name.endswith("/") else content)
    return buf.getvalue()


def software_archive(root="Software_Example") -> bytes:
    return build_archive({
        f"{root}/": b"",
        f"{root}/appcode/": b"",
        f"{root}/META-INF/": b"",
        f"{root}/WEB-INF/": b"",
        f"{root}/WEB-INF/web.xml": "<web-app/>",
        f"{root}/WEB-INF/lib/": b"",
        f"{root}/WEB-INF/classes/Main.class": b"\xca\xfe\xba\xbe",
        f"{root}/index.jsp": "<html/>",
    })


def data_archive(root="Data_Example") -> bytes:
    return build_archive({
        f"{root}/": b"",
        f"{root}/data/": b"",
        f"{root}/data/data.sql": "CREATE TABLE t (k INT PRIMARY KEY, v INT);",
    })
