"""Loading SCM templates from YAML/JSON key-value trees.

Mechanisms are given either as explicit table rows::

    X: {parents: [Z, U_X], table: [[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]]}

where each row lists the parent values followed by the output, or as a
boolean expression over binary variables::

    X: {expr: {xor: [U_X, U_XY, Z, "X[t-1]"]}}

Expressions are ints, variable references (``"V"`` for the current slice,
``"V[t-1]"`` for the previous one) or single-key mappings ``xor``, ``and``,
``or`` (lists), ``not`` and ``const``. Expressions are compiled to tables
at load time.
"""

from __future__ import annotations

import itertools
import re
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .scm import ExogenousSpec, Ref, ScmTemplate, StructuralTable

_LAG_RE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*(?:\[\s*t\s*-\s*1\s*\])?\s*$")


class ConfigError(ValueError):
    pass


def read_tree(source) -> dict:
    """Read a YAML (or JSON) file, or pass a mapping through."""
    if isinstance(source, Mapping):
        return dict(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return tree


def parse_ref(text: str) -> Ref:
    m = _LAG_RE.match(str(text))
    if not m:
        raise ConfigError(f"bad variable reference {text!r}")
    return m.group(1), (1 if "[" in text else 0)


def format_ref(ref: Ref) -> str:
    name, lag = ref
    return f"{name}[t-1]" if lag else name


def _expr_refs(expr, out: list):
    if isinstance(expr, bool) or isinstance(expr, int):
        return
    if isinstance(expr, str):
        ref = parse_ref(expr)
        if ref not in out:
            out.append(ref)
        return
    if isinstance(expr, Mapping) and len(expr) == 1:
        (op, arg), = expr.items()
        if op in ("xor", "and", "or"):
            for a in arg:
                _expr_refs(a, out)
            return
        if op == "not":
            _expr_refs(arg, out)
            return
        if op == "const":
            return
    raise ConfigError(f"bad expression {expr!r}")


def _eval_expr(expr, env: Mapping[Ref, int]) -> int:
    if isinstance(expr, bool) or isinstance(expr, int):
        return int(expr)
    if isinstance(expr, str):
        return env[parse_ref(expr)]
    (op, arg), = expr.items()
    if op == "xor":
        return sum(_eval_expr(a, env) for a in arg) % 2
    if op == "and":
        return int(all(_eval_expr(a, env) for a in arg))
    if op == "or":
        return int(any(_eval_expr(a, env) for a in arg))
    if op == "not":
        return 1 - _eval_expr(arg, env)
    return int(arg)  # const


def _mechanism(name: str, spec, domains: Mapping[str, tuple[int, ...]]) -> StructuralTable:
    if not isinstance(spec, Mapping):
        spec = {"expr": spec}
    if "table" in spec:
        parents = tuple(parse_ref(p) for p in spec.get("parents", []))
        table = {}
        for row in spec["table"]:
            row = [int(v) for v in row]
            if len(row) != len(parents) + 1:
                raise ConfigError(f"mechanism {name}: row {row} does not match {len(parents)} parents")
            table[tuple(row[:-1])] = row[-1]
        return StructuralTable(name, parents, table)
    if "expr" not in spec:
        raise ConfigError(f"mechanism {name} needs either 'table' or 'expr'")
    expr = spec["expr"]
    found: list[Ref] = []
    _expr_refs(expr, found)
    if "parents" in spec:
        parents = tuple(parse_ref(p) for p in spec["parents"])
        unused = [format_ref(r) for r in found if r not in parents]
        if unused:
            raise ConfigError(f"mechanism {name}: expression reads {unused} not listed as parents")
    else:
        parents = tuple(found)
    unknown = [p for p, _ in parents if p not in domains]
    if unknown:
        raise ConfigError(f"mechanism {name} references unknown variables {unknown}")
    table = {}
    for combo in itertools.product(*(domains[p] for p, _ in parents)):
        table[combo] = _eval_expr(expr, dict(zip(parents, combo)))
    return StructuralTable(name, parents, table)


def template_from_dict(tree: Mapping[str, Any]) -> ScmTemplate:
    try:
        variables = {}
        for v in tree["variables"]:
            variables[str(v["name"])] = tuple(int(x) for x in v.get("domain", (0, 1)))
        exogenous = {}
        for u in tree["exogenous"]:
            if "pmf_by_slice" in u:
                raise ConfigError(f"exogenous {u['name']}: time-varying pmfs are not supported")
            name = str(u["name"])
            if "p" in u:
                exogenous[name] = ExogenousSpec.bernoulli(name, float(u["p"]))
            else:
                pmf = {int(k): float(p) for k, p in u["pmf"].items()}
                exogenous[name] = ExogenousSpec(name, tuple(pmf), tuple(pmf.values()))
        reward = str(tree.get("reward", "Y"))
        domains = dict(variables)
        domains.update({n: s.values for n, s in exogenous.items()})
        f0 = {n: _mechanism(n, s, domains) for n, s in tree["functions_t0"].items()}
        ft = {n: _mechanism(n, s, domains) for n, s in tree.get("functions_t", tree["functions_t0"]).items()}
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed SCM description: {exc!r}") from exc
    return ScmTemplate(variables, reward, exogenous, f0, ft)


def load_template(source) -> ScmTemplate:
    return template_from_dict(read_tree(source))


def template_to_dict(template: ScmTemplate) -> dict:
    """Explicit-table form; round-trips through :func:`template_from_dict`."""

    def mech(fn: StructuralTable):
        return {
            "parents": [format_ref(r) for r in fn.parents],
            "table": [list(k) + [v] for k, v in sorted(fn.table.items())],
        }

    return {
        "reward": template.reward,
        "variables": [{"name": n, "domain": list(d)} for n, d in template.variables.items()],
        "exogenous": [
            {"name": s.name, "pmf": {int(v): float(p) for v, p in zip(s.values, s.probs)}}
            for s in template.exogenous.values()
        ],
        "functions_t0": {n: mech(f) for n, f in template.functions_t0.items()},
        "functions_t": {n: mech(f) for n, f in template.functions_t.items()},
    }


def bundled_path(name: str) -> Path:
    """Path of a config file shipped with the package (e.g. ``toy_scm.yaml``)."""
    return Path(str(resources.files("ccb") / "data" / name))


def toy_template() -> ScmTemplate:
    return load_template(bundled_path("toy_scm.yaml"))
