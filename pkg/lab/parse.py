"""
Declarative run configuration.

A config is flat text made of sections; blank lines and `#` comments are
ignored, every other line is `key = value`:

    [group]
    catalog = hecke_3            # a shipped group, or spell one out:
    label = my_group
    dimension = 2
    generator = 1 3 0 1          # matrix entries a b c d, row-major; complex as 1+2j

    [cusp]                       # repeatable, attaches to the group above
    point = 0 -1                 # boundary direction
    rank = 1
    radius = 0.5
    stabilizer = 1 3 0 1         # repeatable

    [gauge]
    preset = stratmann           # or delta / c_lin / c_log / c_loglog / c_logloglog / c_log4 / c_const
    delta = 1.5
    kmin = 1
    kmax = 2

    [run]
    t_max = 12
    t_grid = 1 8 29              # start stop count
    samples = 20
    seed = 0
    threads = 1
    out = results

    [khinchin]
    target = const 1             # const C | log_power A [SCALE] | family ALPHA
    lam = 0.5
    thresholds = 4 6 8

    [dichotomy]
    gauges = power stratmann hausdorff_p2
    triples = 1.5 1 2, 1.25 1 2
    seeds = 100
    horizon = 1e6

Every error names the 1-based line it comes from.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, InstanceOf, ValidationError, field_validator

from core.config import settings
from core.errors import ConfigError, PsLabError
from core.geometry import BoundaryPoint, Isometry
from core.groups import CuspDatum, GroupSpec, get_group
from core.models import GaugeSpec
from lab.gauge import GAUGE_FIELDS, preset

logger = logging.getLogger(__name__)

SECTIONS = ("group", "cusp", "gauge", "run", "khinchin", "dichotomy")


class KhinchinSettings(BaseModel):
    kind: str = Field(default="const", pattern="^(const|log_power|family)$")
    params: Tuple[float, ...] = (1.0,)
    lam: float = Field(default=0.5, gt=0, lt=1)
    thresholds: Optional[Tuple[float, ...]] = None
    p_index: int = Field(default=0, ge=0)


class DichotomySettings(BaseModel):
    gauges: Tuple[str, ...] = ("power", "stratmann", "hausdorff_p2")
    triples: Tuple[Tuple[float, int, int], ...] = ((1.5, 1, 2),)
    seeds: int = Field(default=100, ge=1)
    horizon: float = Field(default=1e6, ge=64)
    intensity: float = Field(default=0.5, gt=0)


class RunConfig(BaseModel):
    """Everything a command needs, validated on load."""
    model_config = ConfigDict(frozen=True)

    group: Optional[InstanceOf[GroupSpec]] = None
    gauge: Optional[GaugeSpec] = None
    kmin: int = Field(default=1, ge=1)
    kmax: int = Field(default=2, ge=1)
    t_max: float = Field(default=10.0, ge=0)
    t_grid: Tuple[float, float, int] = (1.0, 8.0, 29)
    samples: int = Field(default=20, ge=1)
    seed: int = Field(default_factory=lambda: settings.default_seed)
    threads: int = Field(default=1, ge=1)
    out: Path = Path("results")
    khinchin: KhinchinSettings = KhinchinSettings()
    dichotomy: DichotomySettings = DichotomySettings()
    source: str = ""

    @field_validator("t_grid")
    @classmethod
    def _grid(cls, v: Tuple[float, float, int]) -> Tuple[float, float, int]:
        start, stop, count = v
        if not 0 < start < stop or count < 2:
            raise ValueError("t_grid needs 0 < start < stop and at least 2 points")
        return v

    def require_group(self) -> GroupSpec:
        if self.group is None:
            raise ConfigError("this command needs a [group] section")
        return self.group

    def require_gauge(self) -> GaugeSpec:
        if self.gauge is None:
            raise ConfigError("this command needs a [gauge] section")
        return self.gauge


# --- Values ---

def _numbers(value: str, line: int, kind=float) -> List:
    try:
        return [kind(tok) for tok in value.replace(",", " ").split()]
    except ValueError as e:
        raise ConfigError(f"bad number in {value!r}: {e}", line) from e


def _complex_entries(value: str, line: int) -> List[complex]:
    tokens = value.split()
    if len(tokens) != 4:
        raise ConfigError(f"a matrix needs 4 entries, got {len(tokens)}", line)
    try:
        return [complex(tok.replace("i", "j")) for tok in tokens]
    except ValueError as e:
        raise ConfigError(f"bad matrix entry in {value!r}", line) from e


def _isometry(value: str, line: int, dimension: int) -> Isometry:
    try:
        return Isometry.from_entries(*_complex_entries(value, line), dimension=dimension)
    except ConfigError:
        raise
    except PsLabError as e:
        raise ConfigError(str(e), line) from e


def _one(entries: Dict[str, List[Tuple[int, str]]], key: str) -> Optional[Tuple[int, str]]:
    found = entries.get(key, [])
    if len(found) > 1:
        raise ConfigError(f"key {key!r} given {len(found)} times", found[1][0])
    return found[0] if found else None


# --- Sections ---

def _split(text: str) -> List[Tuple[str, int, Dict[str, List[Tuple[int, str]]]]]:
    blocks: List[Tuple[str, int, Dict[str, List[Tuple[int, str]]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", lineno)
            name = line[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]; expected one of {', '.join(SECTIONS)}", lineno)
            blocks.append((name, lineno, {}))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if not blocks:
            raise ConfigError("key outside any section", lineno)
        key, _, value = line.partition("=")
        blocks[-1][2].setdefault(key.strip().lower(), []).append((lineno, value.strip()))
    return blocks


def _check_keys(name: str, start: int, entries: Dict, allowed: Tuple[str, ...]) -> None:
    for key, found in entries.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{name}]", found[0][0])


def _cusp(start: int, entries: Dict, dimension: int) -> CuspDatum:
    _check_keys("cusp", start, entries, ("point", "rank", "radius", "stabilizer"))
    point = _one(entries, "point")
    if point is None:
        raise ConfigError("[cusp] needs a point", start)
    rank = _one(entries, "rank")
    radius = _one(entries, "radius")
    try:
        return CuspDatum(
            BoundaryPoint(_numbers(point[1], point[0])),
            int(_numbers(rank[1], rank[0], int)[0]) if rank else 1,
            float(_numbers(radius[1], radius[0])[0]) if radius else 0.5,
            tuple(_isometry(v, n, dimension) for n, v in entries.get("stabilizer", [])),
        )
    except ConfigError as e:
        if e.line is None:
            raise ConfigError(str(e), start) from e
        raise
    except PsLabError as e:
        raise ConfigError(str(e), start) from e


def _group(start: int, entries: Dict, cusps: List[Tuple[int, Dict]]) -> GroupSpec:
    _check_keys("group", start, entries, ("catalog", "label", "dimension", "generator"))
    shipped = _one(entries, "catalog")
    if shipped is not None:
        if "generator" in entries or cusps:
            raise ConfigError("a catalog group takes no generators or cusps", shipped[0])
        try:
            return get_group(shipped[1])
        except ConfigError as e:
            raise ConfigError(str(e), shipped[0]) from e
    dim = _one(entries, "dimension")
    dimension = int(_numbers(dim[1], dim[0], int)[0]) if dim else 2
    if dimension not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {dimension}", dim[0])
    label = _one(entries, "label")
    generators = [_isometry(v, n, dimension) for n, v in entries.get("generator", [])]
    if not generators:
        raise ConfigError("[group] needs a catalog name or at least one generator", start)
    try:
        return GroupSpec(
            tuple(generators),
            tuple(_cusp(n, block, dimension) for n, block in cusps),
            dimension,
            label[1] if label else "group",
        )
    except ConfigError as e:
        if e.line is None:
            raise ConfigError(str(e), start) from e
        raise


def _gauge(start: int, entries: Dict) -> Tuple[Optional[GaugeSpec], Dict[str, int]]:
    _check_keys("gauge", start, entries, ("preset", "label", "kmin", "kmax") + GAUGE_FIELDS)
    ranks = {}
    for key in ("kmin", "kmax"):
        found = _one(entries, key)
        if found:
            ranks[key] = int(_numbers(found[1], found[0], int)[0])
    values = {}
    for key in GAUGE_FIELDS:
        found = _one(entries, key)
        if found:
            values[key] = float(_numbers(found[1], found[0])[0])
    named = _one(entries, "preset")
    label = _one(entries, "label")
    try:
        if named is not None:
            extra = set(values) - {"delta"}
            if extra:
                raise ConfigError(f"preset gauges take only delta, got {', '.join(sorted(extra))}", named[0])
            g = preset(named[1], values.get("delta", 1.5), ranks.get("kmin", 1), ranks.get("kmax", 2))
        else:
            if "delta" not in values:
                raise ConfigError("[gauge] needs delta or a preset", start)
            g = GaugeSpec(**values, label=label[1] if label else "gauge")
    except ValidationError as e:
        raise ConfigError(f"invalid gauge: {e.errors()[0]['msg']}", start) from e
    except ConfigError:
        raise
    except PsLabError as e:
        raise ConfigError(str(e), named[0] if named else start) from e
    if label and named:
        g = g.model_copy(update={"label": label[1]})
    return g, ranks


def _run(start: int, entries: Dict) -> Dict:
    _check_keys("run", start, entries, ("t_max", "t_grid", "samples", "seed", "threads", "out"))
    out = {}
    for key, kind in (("t_max", float), ("samples", int), ("seed", int), ("threads", int)):
        found = _one(entries, key)
        if found:
            out[key] = _numbers(found[1], found[0], kind)[0]
    grid = _one(entries, "t_grid")
    if grid:
        parts = _numbers(grid[1], grid[0])
        if len(parts) != 3:
            raise ConfigError("t_grid needs start, stop and count", grid[0])
        out["t_grid"] = (parts[0], parts[1], int(parts[2]))
    target = _one(entries, "out")
    if target:
        out["out"] = Path(target[1])
    return out


def _khinchin(start: int, entries: Dict) -> Dict:
    _check_keys("khinchin", start, entries, ("target", "lam", "thresholds", "cusp"))
    out = {}
    target = _one(entries, "target")
    if target:
        head, *rest = target[1].split()
        out["kind"] = head
        out["params"] = tuple(_numbers(" ".join(rest), target[0])) or (1.0,)
    lam = _one(entries, "lam")
    if lam:
        out["lam"] = _numbers(lam[1], lam[0])[0]
    thresholds = _one(entries, "thresholds")
    if thresholds:
        out["thresholds"] = tuple(_numbers(thresholds[1], thresholds[0]))
    cusp = _one(entries, "cusp")
    if cusp:
        out["p_index"] = _numbers(cusp[1], cusp[0], int)[0]
    return out


def _dichotomy(start: int, entries: Dict) -> Dict:
    _check_keys("dichotomy", start, entries, ("gauges", "triples", "seeds", "horizon", "intensity"))
    out = {}
    gauges = _one(entries, "gauges")
    if gauges:
        out["gauges"] = tuple(gauges[1].split())
    triples = _one(entries, "triples")
    if triples:
        parsed = []
        for chunk in triples[1].split(","):
            parts = chunk.split()
            if len(parts) != 3:
                raise ConfigError(f"a triple is 'delta kmin kmax', got {chunk.strip()!r}", triples[0])
            delta, = _numbers(parts[0], triples[0])
            kmin, kmax = _numbers(" ".join(parts[1:]), triples[0], int)
            parsed.append((delta, kmin, kmax))
        out["triples"] = tuple(parsed)
    for key, kind in (("seeds", int), ("horizon", float), ("intensity", float)):
        found = _one(entries, key)
        if found:
            out[key] = _numbers(found[1], found[0], kind)[0]
    return out


# --- Entry points ---

def parse_config(text: str) -> RunConfig:
    blocks = _split(text)
    seen: Dict[str, int] = {}
    for name, lineno, _ in blocks:
        if name != "cusp" and name in seen:
            raise ConfigError(f"section [{name}] repeated (first at line {seen[name]})", lineno)
        seen.setdefault(name, lineno)

    fields: Dict = {"source": text}
    group_block = next(((n, e) for name, n, e in blocks if name == "group"), None)
    cusps = [(n, e) for name, n, e in blocks if name == "cusp"]
    if cusps and group_block is None:
        raise ConfigError("[cusp] without a [group]", cusps[0][0])
    if group_block is not None:
        fields["group"] = _group(group_block[0], group_block[1], cusps)

    for name, lineno, entries in blocks:
        try:
            if name == "gauge":
                g, ranks = _gauge(lineno, entries)
                fields["gauge"] = g
                fields.update(ranks)
            elif name == "run":
                fields.update(_run(lineno, entries))
            elif name == "khinchin":
                fields["khinchin"] = KhinchinSettings(**_khinchin(lineno, entries))
            elif name == "dichotomy":
                fields["dichotomy"] = DichotomySettings(**_dichotomy(lineno, entries))
        except ValidationError as e:
            err = e.errors()[0]
            where = ".".join(str(p) for p in err["loc"])
            raise ConfigError(f"[{name}] {where}: {err['msg']}", lineno) from e

    try:
        config = RunConfig(**fields)
    except ValidationError as e:
        err = e.errors()[0]
        key = str(err["loc"][0]) if err["loc"] else ""
        lineno = _line_of(blocks, key)
        raise ConfigError(f"{key}: {err['msg']}", lineno) from e
    if config.kmin > config.kmax:
        raise ConfigError(f"kmin={config.kmin} exceeds kmax={config.kmax}", _line_of(blocks, "kmin"))
    return config


def _line_of(blocks, key: str) -> Optional[int]:
    for _, _, entries in blocks:
        if key in entries:
            return entries[key][0][0]
    return None


def load_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    config = parse_config(path.read_text(encoding="utf-8"))
    logger.debug("Loaded config %s", path)
    return config
