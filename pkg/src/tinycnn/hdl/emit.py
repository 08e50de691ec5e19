"""Assemble the accelerator source tree: units, top level, ROM memfiles, manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fixedpoint as fx
from ..datapath import QPlan, QuantizedLayer, quantize_params
from ..model import LayerKind, NetworkSpec, WeightBundle, manifest_dict, weight_count
from ..resources import ConvMode, DeviceSpec, FitError, HardwareConfig, check_fit, validate_config
from . import units
from .lint import lint_tree


class HdlLintError(RuntimeError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("emitted HDL failed lint:\n  " + "\n  ".join(problems))


# ---------------------------------------------------------------- memfiles


def emit_memfile(raws, width: int = 16) -> str:
    """One two's-complement hex word per line, LF-terminated."""
    return "".join(fx.to_hex_word(int(r), width) + "\n" for r in raws)


def parse_memfile(text: str, width: int = 16) -> list[int]:
    return [fx.from_hex_word(line, width) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------- plan


@dataclass(frozen=True)
class EmitPlan:
    spec: NetworkSpec
    weights: WeightBundle
    qplan: QPlan
    config: HardwareConfig

    @property
    def width(self) -> int:
        return self.qplan.width

    @property
    def acc_width(self) -> int:
        return fx.accumulator_bits(self.qplan.width)


def memfile_path(param_index: int) -> str:
    return f"weights/layer{param_index}.mem"


def _adjust_in_width(plan: EmitPlan, index: int) -> int:
    kind = plan.spec.layers[index].kind
    return plan.acc_width if kind in (LayerKind.CONV2D, LayerKind.DENSE) else plan.width


def _adjust_shift(plan: EmitPlan, qparams: dict[int, QuantizedLayer], index: int) -> int:
    layer = plan.spec.layers[index]
    src_frac = qparams[index].acc_frac if layer.has_params else plan.qplan.frac_before(index)
    return src_frac - plan.qplan.activation_frac[index]


def build_units(plan: EmitPlan, qparams: dict[int, QuantizedLayer]) -> dict[str, str]:
    """``units/*.v`` file contents keyed by relative path."""
    spec, cfg, w = plan.spec, plan.config, plan.width
    files: dict[str, str] = {}
    convs = spec.conv_layer_indices()
    param_idx = {layer: p for p, layer in enumerate(spec.param_layer_indices())}

    if convs:
        kernels = {spec.layers[i].kernel for i in convs}
        if cfg.conv_mode is ConvMode.SHARED and len(kernels) > 1:
            raise ValueError("shared conv mode needs one kernel size across conv layers")
        dsps = cfg.conv_dsps(len(convs))
        max_cols = max(spec.in_shape(i).width for i in convs)
        files["units/conv_unit.v"] = units.emit_conv_unit(
            max(dsps), w, plan.acc_width, spec.layers[convs[0]].kernel, max_cols)
    if cfg.conv_mode is ConvMode.SHARED and convs:
        files["units/conv_arbiter.v"] = units.emit_arbiter(len(convs))

    for i, layer in enumerate(spec.layers):
        in_shape = spec.in_shape(i)
        if layer.kind is LayerKind.CONV2D:
            q = qparams[i]
            files[f"units/feedforward_l{i}.v"] = units.emit_feedforward(
                f"feedforward_l{i}", memfile_path(param_idx[i]),
                height=in_shape.height, cols=in_shape.width, in_ch=in_shape.channels,
                out_ch=layer.out_channels, kernel=layer.kernel,
                rom_depth=len(q.rom_words()), n_weights=weight_count(layer, in_shape),
                has_bias=q.bias_format is not None, bias_shift=q.bias_shift,
                width=w, acc_width=plan.acc_width)
        elif layer.kind is LayerKind.DENSE:
            q = qparams[i]
            files[f"units/dense_unit_l{i}.v"] = units.emit_dense(
                f"dense_unit_l{i}", memfile_path(param_idx[i]),
                n_in=in_shape.size, n_out=layer.units, dsps=min(cfg.dsp_dense, in_shape.size),
                rom_depth=len(q.rom_words()), has_bias=q.bias_format is not None,
                bias_shift=q.bias_shift, width=w, acc_width=plan.acc_width)
        elif layer.kind is LayerKind.RELU:
            files["units/relu_unit.v"] = units.emit_relu(w)
        elif layer.kind is LayerKind.MAXPOOL:
            files[f"units/maxpool_m{layer.pool_size}.v"] = units.emit_maxpool(layer.pool_size, w)
        files[f"units/precision_adjust_l{i}.v"] = units.emit_precision_adjust(
            f"precision_adjust_l{i}", _adjust_shift(plan, qparams, i), _adjust_in_width(plan, i), w)
    return files


# ---------------------------------------------------------------- top level


def _stream(name: str, width: str) -> list[str]:
    return [f"    wire [{width}-1:0] {name}_data;",
            f"    wire {name}_valid;",
            f"    wire {name}_ready;"]


def emit_top(plan: EmitPlan) -> str:
    spec, cfg = plan.spec, plan.config
    convs = spec.conv_layer_indices()
    shared = cfg.conv_mode is ConvMode.SHARED
    conv_d = dict(zip(convs, cfg.conv_dsps(len(convs))))
    kernel = spec.layers[convs[0]].kernel if convs else 3
    max_cols = max((spec.in_shape(i).width for i in convs), default=1)
    out_shape = spec.output_shape

    head = [
        f"// {spec.name}: {len(spec.layers)} layers, {cfg.conv_mode.value} conv mode, "
        f"W={plan.width}",
        "module top (",
        "    input  wire         clk,",
        "    input  wire         rst,",
        f"    input  wire [{plan.width - 1}:0] in_data,",
        "    input  wire         in_valid,",
        "    output wire         in_ready,",
        f"    output wire [{plan.width - 1}:0] out_data,",
        "    output wire         out_valid,",
        "    output wire         out_last,",
        "    input  wire         out_ready",
        ");",
        f"    localparam W = {plan.width};",
        f"    localparam ACC_W = {plan.acc_width};",
        f"    localparam K = {kernel};",
        f"    localparam SPAN_MAX = {max_cols + kernel - 1};",
        "",
        "    // input stream: pixels in channel-major order",
        *_stream("s_in", "W"),
        "    assign s_in_data = in_data;",
        "    assign s_in_valid = in_valid;",
        "    assign in_ready = s_in_ready;",
        "",
    ]
    body: list[str] = []
    shared_lines: list[str] = []
    prev = "s_in"
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        in_shape = spec.in_shape(i)
        cur = f"s{i}"
        body.append(f"    // layer {i}: {layer.describe()} -> {spec.out_shape(i)}")
        body += _stream(cur, "W")
        if kind is LayerKind.CONV2D:
            ff, cv = f"ff{i}", f"cv{i}"
            span = in_shape.width + layer.kernel - 1
            body += [
                f"    wire [K*{span}*W-1:0] {ff}_win_data;",
                f"    wire [K*K*W-1:0] {ff}_filt_data;",
                f"    wire [ACC_W-1:0] {ff}_bias_data;",
                f"    wire {ff}_win_first, {ff}_win_last, {ff}_win_valid, {ff}_win_ready;",
                f"    wire {ff}_filt_valid, {ff}_filt_ready, {ff}_done;",
                *_stream(cv, "ACC_W"),
                f"    wire {cv}_last;",
                f"    feedforward_l{i} u_ff_l{i} (",
                "        .clk(clk), .rst(rst),",
                f"        .in_data({prev}_data), .in_valid({prev}_valid), .in_ready({prev}_ready),",
                f"        .win_data({ff}_win_data), .win_first({ff}_win_first), .win_last({ff}_win_last),",
                f"        .win_valid({ff}_win_valid), .win_ready({ff}_win_ready),",
                f"        .filt_data({ff}_filt_data), .bias_data({ff}_bias_data),",
                f"        .filt_valid({ff}_filt_valid), .filt_ready({ff}_filt_ready),",
                f"        .layer_done({ff}_done)",
                "    );",
            ]
            if shared:
                # widen this layer's window rows to the shared unit's span
                body.append(f"    wire [K*SPAN_MAX*W-1:0] {ff}_win_wide;")
                for kh in range(layer.kernel):
                    body.append(
                        f"    assign {ff}_win_wide[{kh}*SPAN_MAX*W +: SPAN_MAX*W] = "
                        f"{{{{((SPAN_MAX-{span})*W){{1'b0}}}}, {ff}_win_data[{kh}*{span}*W +: {span}*W]}};"
                    )
            else:
                body += [
                    f"    conv_unit #(.W(W), .ACC_W(ACC_W), .K(K), .COLS({in_shape.width}), "
                    f".D({conv_d[i]})) u_conv_l{i} (",
                    "        .clk(clk), .rst(rst),",
                    f"        .active_cols(16'd{in_shape.width}),",
                    f"        .win_data({ff}_win_data), .win_first({ff}_win_first), .win_last({ff}_win_last),",
                    f"        .win_valid({ff}_win_valid), .win_ready({ff}_win_ready),",
                    f"        .filt_data({ff}_filt_data), .bias_data({ff}_bias_data),",
                    f"        .filt_valid({ff}_filt_valid), .filt_ready({ff}_filt_ready),",
                    f"        .row_data({cv}_data), .row_last({cv}_last),",
                    f"        .row_valid({cv}_valid), .row_ready({cv}_ready)",
                    "    );",
                ]
            body += [
                f"    precision_adjust_l{i} u_adj_l{i} (.din({cv}_data), .dout({cur}_data));",
                f"    assign {cur}_valid = {cv}_valid;",
                f"    assign {cv}_ready = {cur}_ready;",
            ]
        elif kind is LayerKind.DENSE:
            dn = f"dn{i}"
            body += [
                *_stream(dn, "ACC_W"),
                f"    dense_unit_l{i} u_dense_l{i} (",
                "        .clk(clk), .rst(rst),",
                f"        .in_data({prev}_data), .in_valid({prev}_valid), .in_ready({prev}_ready),",
                f"        .out_data({dn}_data), .out_valid({dn}_valid), .out_ready({dn}_ready)",
                "    );",
                f"    precision_adjust_l{i} u_adj_l{i} (.din({dn}_data), .dout({cur}_data));",
                f"    assign {cur}_valid = {dn}_valid;",
                f"    assign {dn}_ready = {cur}_ready;",
            ]
        elif kind is LayerKind.RELU:
            body += [
                f"    wire [W-1:0] r{i}_data;",
                f"    relu_unit #(.W(W)) u_relu_l{i} (.din({prev}_data), .dout(r{i}_data));",
                f"    precision_adjust_l{i} u_adj_l{i} (.din(r{i}_data), .dout({cur}_data));",
                f"    assign {cur}_valid = {prev}_valid;",
                f"    assign {prev}_ready = {cur}_ready;",
            ]
        elif kind is LayerKind.MAXPOOL:
            mp = f"mp{i}"
            body += [
                *_stream(mp, "W"),
                f"    maxpool_m{layer.pool_size} #(.W(W), .COLS({in_shape.width})) u_pool_l{i} (",
                "        .clk(clk), .rst(rst),",
                f"        .in_data({prev}_data), .in_valid({prev}_valid), .in_ready({prev}_ready),",
                f"        .out_data({mp}_data), .out_valid({mp}_valid), .out_ready({mp}_ready)",
                "    );",
                f"    precision_adjust_l{i} u_adj_l{i} (.din({mp}_data), .dout({cur}_data));",
                f"    assign {cur}_valid = {mp}_valid;",
                f"    assign {mp}_ready = {cur}_ready;",
            ]
        else:  # flatten: RAM order is already channel-major, only the precision adjust remains
            body += [
                f"    precision_adjust_l{i} u_adj_l{i} (.din({prev}_data), .dout({cur}_data));",
                f"    assign {cur}_valid = {prev}_valid;",
                f"    assign {prev}_ready = {cur}_ready;",
            ]
        body.append("")
        prev = cur

    if shared and convs:
        n = len(convs)
        ffs = [f"ff{i}" for i in convs]
        cvs = [f"cv{i}" for i in convs]
        rev = list(reversed(range(n)))
        shared_lines = [
            f"    // shared conv unit: {n} feedforward clients arbitrated onto one conv_unit",
            f"    wire [{n - 1}:0] arb_req, arb_done, arb_grant;",
            "    wire arb_busy;",
            "    assign arb_req = {" + ", ".join(f"{ffs[k]}_win_valid" for k in rev) + "};",
            "    assign arb_done = {" + ", ".join(f"{ffs[k]}_done" for k in rev) + "};",
            f"    conv_arbiter #(.N({n})) u_arbiter (",
            "        .clk(clk), .rst(rst), .req(arb_req), .done(arb_done),",
            "        .grant(arb_grant), .busy(arb_busy)",
            "    );",
            "    wire [K*SPAN_MAX*W-1:0] sh_win_data;",
            "    wire [K*K*W-1:0] sh_filt_data;",
            "    wire [ACC_W-1:0] sh_bias_data, sh_row_data;",
            "    wire [15:0] sh_cols;",
            "    wire sh_win_first, sh_win_last, sh_win_valid, sh_win_ready;",
            "    wire sh_filt_valid, sh_filt_ready, sh_row_last, sh_row_valid, sh_row_ready;",
        ]

        def mux(field_fmt: str, default: str) -> str:
            expr = default
            for k in rev:
                expr = f"arb_grant[{k}] ? {field_fmt.format(ffs[k])} : {expr}"
            return expr

        shared_lines += [
            f"    assign sh_win_data = {mux('{}_win_wide', '{(K*SPAN_MAX*W){1b0}}')};",
            f"    assign sh_filt_data = {mux('{}_filt_data', '{(K*K*W){1b0}}')};",
            f"    assign sh_bias_data = {mux('{}_bias_data', '{ACC_W{1b0}}')};",
            f"    assign sh_win_first = {mux('{}_win_first', '1b0')};",
            f"    assign sh_win_last = {mux('{}_win_last', '1b0')};",
            f"    assign sh_win_valid = {mux('{}_win_valid', '1b0')};",
            f"    assign sh_filt_valid = {mux('{}_filt_valid', '1b0')};",
        ]
        expr = "16'd0"
        for k in rev:
            expr = f"arb_grant[{k}] ? 16'd{spec.in_shape(convs[k]).width} : {expr}"
        shared_lines.append(f"    assign sh_cols = {expr};")
        for k in range(n):
            shared_lines += [
                f"    assign {ffs[k]}_win_ready = arb_grant[{k}] & sh_win_ready;",
                f"    assign {ffs[k]}_filt_ready = arb_grant[{k}] & sh_filt_ready;",
                f"    assign {cvs[k]}_data = sh_row_data;",
                f"    assign {cvs[k]}_last = sh_row_last;",
                f"    assign {cvs[k]}_valid = arb_grant[{k}] & sh_row_valid;",
            ]
        shared_lines += [
            "    assign sh_row_ready = |(arb_grant & {"
            + ", ".join(f"{cvs[k]}_ready" for k in rev) + "});",
            f"    conv_unit #(.W(W), .ACC_W(ACC_W), .K(K), .COLS({max_cols}), "
            f".D({conv_d[convs[0]]})) u_conv_shared (",
            "        .clk(clk), .rst(rst),",
            "        .active_cols(sh_cols),",
            "        .win_data(sh_win_data), .win_first(sh_win_first), .win_last(sh_win_last),",
            "        .win_valid(sh_win_valid), .win_ready(sh_win_ready),",
            "        .filt_data(sh_filt_data), .bias_data(sh_bias_data),",
            "        .filt_valid(sh_filt_valid), .filt_ready(sh_filt_ready),",
            "        .row_data(sh_row_data), .row_last(sh_row_last),",
            "        .row_valid(sh_row_valid), .row_ready(sh_row_ready)",
            "    );",
            "",
        ]
        shared_lines = [s.replace("1b0", "1'b0") for s in shared_lines]

    last = prev
    tail = [
        "    // class scores, one word per cycle",
        "    reg [31:0] out_count;",
        f"    assign out_data = {last}_data;",
        f"    assign out_valid = {last}_valid;",
        f"    assign {last}_ready = out_ready;",
        f"    assign out_last = (out_count == {out_shape.size - 1});",
        "    always @(posedge clk) begin",
        "        if (rst)",
        "            out_count <= 0;",
        "        else if (out_valid && out_ready)",
        "            out_count <= out_last ? 0 : out_count + 1;",
        "    end",
        "endmodule",
    ]
    return "\n".join(head + body + shared_lines + tail) + "\n"


# ---------------------------------------------------------------- whole tree


def build_tree(plan: EmitPlan) -> dict[str, str]:
    """All emitted files (except the manifest) keyed by path relative to the output root."""
    plan.qplan.check(plan.spec)
    qparams = quantize_params(plan.spec, plan.weights, plan.qplan)
    files = {"top.v": emit_top(plan)}
    files.update(build_units(plan, qparams))
    for p, i in enumerate(plan.spec.param_layer_indices()):
        files[memfile_path(p)] = emit_memfile(qparams[i].rom_words(), plan.width)
    return files


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def emit_all(plan: EmitPlan, out, device: DeviceSpec) -> dict:
    """Write the tree under ``out`` and return the manifest. Refuses designs that do not fit."""
    validate_config(plan.spec, plan.config)
    fit = check_fit(plan.spec, device, plan.width, plan.config)
    if not fit.fits:
        raise FitError(fit)
    files = build_tree(plan)
    problems = lint_tree(files, set(files))
    if problems:
        raise HdlLintError(problems)
    root = Path(out)
    for rel in sorted(files):
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(files[rel].encode())
    manifest = {
        "network": manifest_dict(plan.spec),
        "files": [{"path": rel, "sha256": sha256_text(files[rel])} for rel in sorted(files)],
        "qplan": plan.qplan.to_dict(),
        "config": plan.config.to_dict(),
        "device": device.to_dict(),
    }
    (root / "emit_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def memfile_raws(plan: EmitPlan) -> dict[int, np.ndarray]:
    """ROM words per parameterized layer index, as the memfiles hold them."""
    qparams = quantize_params(plan.spec, plan.weights, plan.qplan)
    return {i: qparams[i].rom_words() for i in plan.spec.param_layer_indices()}
