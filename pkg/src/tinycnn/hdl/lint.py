"""Tiny structural lint for emitted Verilog (no HDL simulator involved)."""

from __future__ import annotations

import re

_MODULE_RE = re.compile(r"^\s*module\s+(\w+)", re.M)
_PORT_RE = re.compile(
    r"^\s*(?:input|output|inout)\s+(?:wire|reg)?\s*(?:signed)?\s*(?:\[[^\]]*\])?\s*(\w+)\s*,?\s*$",
    re.M,
)
_INST_RE = re.compile(r"^\s*(\w+)\s*(?:#\s*\(.*?\))?\s+(u_\w+)\s*\(", re.M | re.S)
_READMEM_RE = re.compile(r'\$readmemh\s*\(\s*"([^"]+)"')
_COMMENT_RE = re.compile(r"//[^\n]*")


def strip_comments(text: str) -> str:
    return _COMMENT_RE.sub("", text)


def split_modules(text: str) -> dict[str, str]:
    """Module name -> full text from ``module`` to its ``endmodule``."""
    out = {}
    code = strip_comments(text)
    for m in _MODULE_RE.finditer(code):
        end = code.find("endmodule", m.end())
        if end < 0:
            continue
        out[m.group(1)] = code[m.start():end + len("endmodule")]
    return out


def module_ports(module_text: str) -> tuple[list[str], str]:
    """(port names, body after the port list)."""
    close = module_text.find(");")
    header, body = module_text[:close], module_text[close + 2:]
    return _PORT_RE.findall(header), body


def instantiations(text: str) -> list[tuple[str, str]]:
    """(module name, instance name) pairs; instances are named ``u_*``."""
    return _INST_RE.findall(strip_comments(text))


def readmem_paths(text: str) -> list[str]:
    return _READMEM_RE.findall(text)


def _count(pattern: str, text: str) -> int:
    return len(re.findall(pattern, text))


def lint_file(text: str, filename: str = "<text>") -> list[str]:
    problems = []
    code = strip_comments(text)
    n_mod, n_end = _count(r"\bmodule\b", code), _count(r"\bendmodule\b", code)
    if n_mod != n_end or n_mod == 0:
        problems.append(f"{filename}: {n_mod} module vs {n_end} endmodule")
    for open_kw, close_kw in (("begin", "end"), ("case", "endcase"), ("generate", "endgenerate")):
        a, b = _count(rf"\b{open_kw}\b", code), _count(rf"\b{close_kw}\b", code)
        if a != b:
            problems.append(f"{filename}: {a} {open_kw} vs {b} {close_kw}")
    for ch_open, ch_close in ("()", "[]", "{}"):
        if code.count(ch_open) != code.count(ch_close):
            problems.append(f"{filename}: unbalanced {ch_open}")
    for name, mod in split_modules(text).items():
        ports, body = module_ports(mod)
        if not ports:
            problems.append(f"{filename}: module {name} declares no ports")
        for port in ports:
            if not re.search(rf"\b{port}\b", body):
                problems.append(f"{filename}: module {name} port {port} is never referenced")
    return problems


def lint_tree(files: dict[str, str], manifest_paths: set[str]) -> list[str]:
    """Lint every ``.v`` file plus cross-file checks: instantiated modules exist, memfiles exist."""
    problems = []
    defined = {}
    for path, text in files.items():
        if not path.endswith(".v"):
            continue
        problems += lint_file(text, path)
        for name in split_modules(text):
            if name in defined:
                problems.append(f"module {name} defined in both {defined[name]} and {path}")
            defined[name] = path
    for path, text in files.items():
        if not path.endswith(".v"):
            continue
        for module, inst in instantiations(text):
            if module not in defined:
                problems.append(f"{path}: instance {inst} of undefined module {module}")
        for mem in readmem_paths(text):
            if mem not in manifest_paths:
                problems.append(f"{path}: $readmemh path {mem} not in the emitted tree")
    return problems
