"""Verilog text for each accelerator unit.

Every function returns one complete ``module ... endmodule`` block. Output is a
pure function of the arguments so repeated emission is byte-identical.
"""

from __future__ import annotations

from ..fixedpoint import DSP_ACC_BITS


def _join(lines: list[str]) -> str:
    return "\n".join(lines) + "\n"


def emit_conv_unit(dsps: int, width: int = 16, acc_width: int = DSP_ACC_BITS,
                   kernel: int = 3, cols: int = 32) -> str:
    """K-line window convolver whose MAC array uses exactly ``dsps`` multipliers."""
    if dsps < 1:
        raise ValueError("conv unit needs at least one DSP")
    return f"""\
// Window convolver: accumulates K padded input rows against a KxK filter,
// one input channel per window, and streams the finished row of accumulators.
module conv_unit #(
    parameter W = {width},
    parameter ACC_W = {acc_width},
    parameter K = {kernel},
    parameter COLS = {cols},
    parameter D = {dsps}
) (
    input  wire                      clk,
    input  wire                      rst,
    input  wire [15:0]               active_cols,
    input  wire [K*(COLS+K-1)*W-1:0] win_data,
    input  wire                      win_first,
    input  wire                      win_last,
    input  wire                      win_valid,
    output wire                      win_ready,
    input  wire [K*K*W-1:0]          filt_data,
    input  wire [ACC_W-1:0]          bias_data,
    input  wire                      filt_valid,
    output wire                      filt_ready,
    output wire [ACC_W-1:0]          row_data,
    output wire                      row_last,
    output wire                      row_valid,
    input  wire                      row_ready
);
    localparam SPAN = COLS + K - 1;
    localparam GROUPS = (COLS + D - 1) / D;
    localparam N_STATES = GROUPS * K * K;
    localparam [1:0] S_IDLE = 2'd0, S_MAC = 2'd1, S_OUT = 2'd2;

    reg [1:0] state;
    reg [31:0] step;
    reg [15:0] out_col;
    reg emit_row;
    reg signed [W-1:0] win_buf [0:K*SPAN-1];
    reg signed [W-1:0] filt_buf [0:K*K-1];
    reg signed [ACC_W-1:0] acc [0:COLS-1];

    wire [31:0] group = step / (K*K);
    wire [31:0] tap = step % (K*K);
    wire [31:0] kh = tap / K;
    wire [31:0] kw = tap % K;

    wire signed [2*W-1:0] prod [0:D-1];
    wire [31:0] lane_col [0:D-1];

    // MAC array: lane g owns columns g, g+D, g+2D, ...; one DSP slice per lane
    genvar g;
    generate
        for (g = 0; g < D; g = g + 1) begin : g_lane
            assign lane_col[g] = group * D + g;
            assign prod[g] = (lane_col[g] < COLS)
                ? win_buf[kh*SPAN + lane_col[g] + kw] * filt_buf[tap]
                : {{(2*W){{1'b0}}}};
        end
    endgenerate

    assign win_ready = (state == S_IDLE);
    assign filt_ready = (state == S_IDLE);
    assign row_valid = (state == S_OUT);
    assign row_data = acc[out_col];
    assign row_last = (out_col == active_cols - 1);

    integer i;
    always @(posedge clk) begin
        if (rst) begin
            state <= S_IDLE;
            step <= 0;
            out_col <= 0;
            emit_row <= 1'b0;
        end else begin
            case (state)
                S_IDLE: if (win_valid && filt_valid) begin
                    for (i = 0; i < K*SPAN; i = i + 1)
                        win_buf[i] <= win_data[i*W +: W];
                    for (i = 0; i < K*K; i = i + 1)
                        filt_buf[i] <= filt_data[i*W +: W];
                    if (win_first)
                        for (i = 0; i < COLS; i = i + 1)
                            acc[i] <= $signed(bias_data);
                    emit_row <= win_last;
                    step <= 0;
                    state <= S_MAC;
                end
                S_MAC: begin
                    for (i = 0; i < D; i = i + 1)
                        if (lane_col[i] < COLS)
                            acc[lane_col[i]] <= acc[lane_col[i]] + prod[i];
                    if (step == N_STATES - 1) begin
                        out_col <= 0;
                        state <= emit_row ? S_OUT : S_IDLE;
                    end else begin
                        step <= step + 1;
                    end
                end
                S_OUT: if (row_ready) begin
                    if (row_last)
                        state <= S_IDLE;
                    else
                        out_col <= out_col + 1;
                end
                default: state <= S_IDLE;
            endcase
        end
    end
endmodule
"""


def emit_feedforward(name: str, mem_path: str, *, height: int, cols: int, in_ch: int,
                     out_ch: int, kernel: int, rom_depth: int, n_weights: int,
                     has_bias: bool, bias_shift: int, width: int = 16,
                     acc_width: int = DSP_ACC_BITS) -> str:
    """Inter-layer buffer: input SM fills the fmap RAM, output SM feeds K-line windows and filters."""
    ram_depth = height * cols * in_ch
    pad = (kernel - 1) // 2
    if has_bias:
        bias = [
            "    wire signed [W-1:0] bias_word = weight_rom[N_WEIGHTS + oc];",
            "    wire signed [ACC_W-1:0] bias_ext = {{(ACC_W-W){bias_word[W-1]}}, bias_word};",
            "    assign bias_data = bias_ext <<< BIAS_SHIFT;",
        ]
    else:
        bias = ["    assign bias_data = {ACC_W{1'b0}};"]
    lines = [
        f"// Feedforward unit: buffers a {height}x{cols}x{in_ch} fmap, then feeds",
        f"// {kernel}-line windows plus filter words for {out_ch} output channels.",
        f"module {name} #(",
        f"    parameter W = {width},",
        f"    parameter ACC_W = {acc_width},",
        f"    parameter K = {kernel},",
        f"    parameter H = {height},",
        f"    parameter COLS = {cols},",
        f"    parameter IN_CH = {in_ch},",
        f"    parameter OUT_CH = {out_ch},",
        f"    parameter RAM_DEPTH = {ram_depth},",
        f"    parameter ROM_DEPTH = {rom_depth},",
        f"    parameter N_WEIGHTS = {n_weights},",
        f"    parameter BIAS_SHIFT = {bias_shift}",
        ") (",
        "    input  wire                      clk,",
        "    input  wire                      rst,",
        "    input  wire [W-1:0]              in_data,",
        "    input  wire                      in_valid,",
        "    output wire                      in_ready,",
        "    output wire [K*(COLS+K-1)*W-1:0] win_data,",
        "    output wire                      win_first,",
        "    output wire                      win_last,",
        "    output wire                      win_valid,",
        "    input  wire                      win_ready,",
        "    output wire [K*K*W-1:0]          filt_data,",
        "    output wire [ACC_W-1:0]          bias_data,",
        "    output wire                      filt_valid,",
        "    input  wire                      filt_ready,",
        "    output wire                      layer_done",
        ");",
        f"    localparam P = {pad};",
        "    localparam SPAN = COLS + K - 1;",
        "",
        "    reg signed [W-1:0] fmap_ram [0:RAM_DEPTH-1];",
        "    reg signed [W-1:0] weight_rom [0:ROM_DEPTH-1];",
        f'    initial $readmemh("{mem_path}", weight_rom);',
        "",
        "    // input side: write the incoming fmap (channel-major) into the RAM",
        "    reg [31:0] wr_addr;",
        "    reg buffered;",
        "    assign in_ready = !buffered;",
        "    always @(posedge clk) begin",
        "        if (rst) begin",
        "            wr_addr <= 0;",
        "            buffered <= 1'b0;",
        "        end else if (in_valid && in_ready) begin",
        "            fmap_ram[wr_addr] <= in_data;",
        "            if (wr_addr == RAM_DEPTH - 1) begin",
        "                wr_addr <= 0;",
        "                buffered <= 1'b1;",
        "            end else begin",
        "                wr_addr <= wr_addr + 1;",
        "            end",
        "        end else if (layer_done) begin",
        "            buffered <= 1'b0;",
        "        end",
        "    end",
        "",
        "    // output side: out channel, then output row, then input channel",
        "    reg [31:0] oc, row, ic;",
        "    wire fire = win_valid && win_ready && filt_ready;",
        "    assign win_valid = buffered;",
        "    assign filt_valid = buffered;",
        "    assign win_first = (ic == 0);",
        "    assign win_last = (ic == IN_CH - 1);",
        "    assign layer_done = fire && (oc == OUT_CH - 1) && (row == H - 1) && (ic == IN_CH - 1);",
        "    always @(posedge clk) begin",
        "        if (rst) begin",
        "            oc <= 0;",
        "            row <= 0;",
        "            ic <= 0;",
        "        end else if (fire) begin",
        "            if (ic == IN_CH - 1) begin",
        "                ic <= 0;",
        "                if (row == H - 1) begin",
        "                    row <= 0;",
        "                    oc <= (oc == OUT_CH - 1) ? 0 : oc + 1;",
        "                end else begin",
        "                    row <= row + 1;",
        "                end",
        "            end else begin",
        "                ic <= ic + 1;",
        "            end",
        "        end",
        "    end",
        "",
        "    // K-line window with zero padding outside the fmap",
        "    genvar gr, gc, gt;",
        "    generate",
        "        for (gr = 0; gr < K; gr = gr + 1) begin : g_row",
        "            for (gc = 0; gc < SPAN; gc = gc + 1) begin : g_col",
        "                wire signed [31:0] r = $signed(row) + gr - P;",
        "                wire signed [31:0] c = gc - P;",
        "                assign win_data[(gr*SPAN + gc)*W +: W] =",
        "                    (r < 0 || r >= H || c < 0 || c >= COLS) ? {W{1'b0}}",
        "                    : fmap_ram[ic*H*COLS + r*COLS + c];",
        "            end",
        "        end",
        "        for (gt = 0; gt < K*K; gt = gt + 1) begin : g_tap",
        "            assign filt_data[gt*W +: W] = weight_rom[(oc*IN_CH + ic)*K*K + gt];",
        "        end",
        "    endgenerate",
        "",
        *bias,
        "endmodule",
    ]
    return _join(lines)


def emit_relu(width: int = 16) -> str:
    return _join([
        "// ReLU: sign-bit mux",
        "module relu_unit #(",
        f"    parameter W = {width}",
        ") (",
        "    input  wire [W-1:0] din,",
        "    output wire [W-1:0] dout",
        ");",
        "    assign dout = din[W-1] ? {W{1'b0}} : din;",
        "endmodule",
    ])


def comparator_tree(inputs: list[str], width_expr: str = "W") -> tuple[list[str], str]:
    """Pairwise max reduction; returns (declaration lines, name of the root wire)."""
    lines = []
    level = list(inputs)
    n = 0
    while len(level) > 1:
        nxt = []
        for a, b in zip(level[0::2], level[1::2]):
            wire = f"cmp{n}"
            lines.append(f"    wire signed [{width_expr}-1:0] {wire};")
            lines.append(f"    assign {wire} = ($signed({a}) > $signed({b})) ? {a} : {b};")
            nxt.append(wire)
            n += 1
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return lines, level[0]


def emit_maxpool(pool: int, width: int = 16) -> str:
    """Streaming MxM max pooling with stride-M window addressing over M buffered rows."""
    if pool < 1:
        raise ValueError("pool size must be >= 1")
    taps = []
    for dy in range(pool):
        for dx in range(pool):
            if dy == pool - 1 and dx == pool - 1:
                taps.append("in_data")
            else:
                taps.append(f"lines[{dy}*COLS + base + {dx}]")
    tree, root = comparator_tree(taps)
    lines = [
        f"// {pool}x{pool} max pooling, stride {pool}; {pool * pool - 1} comparators per window",
        f"module maxpool_m{pool} #(",
        f"    parameter W = {width},",
        "    parameter COLS = 32",
        ") (",
        "    input  wire         clk,",
        "    input  wire         rst,",
        "    input  wire [W-1:0] in_data,",
        "    input  wire         in_valid,",
        "    output wire         in_ready,",
        "    output wire [W-1:0] out_data,",
        "    output wire         out_valid,",
        "    input  wire         out_ready",
        ");",
        f"    localparam M = {pool};",
        "    reg signed [W-1:0] lines [0:M*COLS-1];",
        "    reg [31:0] col, sub_row;",
        "    // stride-M addressing: first column of the window ending at this input",
        "    wire [31:0] base = col - (M - 1);",
        "    wire window_done = (sub_row == M - 1) && (col % M == M - 1);",
        "    wire fire = in_valid && in_ready;",
        *tree,
        f"    assign out_data = {root};",
        "    assign out_valid = in_valid && window_done;",
        "    assign in_ready = out_ready || !window_done;",
        "    always @(posedge clk) begin",
        "        if (rst) begin",
        "            col <= 0;",
        "            sub_row <= 0;",
        "        end else if (fire) begin",
        "            lines[sub_row*COLS + col] <= in_data;",
        "            if (col == COLS - 1) begin",
        "                col <= 0;",
        "                sub_row <= (sub_row == M - 1) ? 0 : sub_row + 1;",
        "            end else begin",
        "                col <= col + 1;",
        "            end",
        "        end",
        "    end",
        "endmodule",
    ]
    return _join(lines)


def emit_precision_adjust(name: str, shift: int, in_width: int, width: int = 16) -> str:
    """Round half away from zero by ``shift`` bits (left shift if negative), then saturate to W bits."""
    lines = [
        f"// Precision adjust: shift {shift}, round half away from zero, saturate to {width} bits",
        f"module {name} (",
        f"    input  wire [{in_width - 1}:0] din,",
        f"    output wire [{width - 1}:0] dout",
        ");",
    ]
    if shift > 0:
        sw = in_width + 1
        lines += [
            "    wire neg = din[%d];" % (in_width - 1),
            f"    wire [{in_width - 1}:0] mag = neg ? (~din + 1'b1) : din;",
            f"    wire [{in_width}:0] rounded = ({{1'b0, mag}} + {in_width + 1}'d{1 << (shift - 1)}) >> {shift};",
            f"    wire signed [{sw - 1}:0] scaled = neg ? -$signed(rounded) : $signed(rounded);",
        ]
    elif shift < 0:
        sw = in_width - shift
        lines += [
            f"    wire signed [{sw - 1}:0] ext = {{{{{-shift}{{din[{in_width - 1}]}}}}, din}};",
            f"    wire signed [{sw - 1}:0] scaled = ext <<< {-shift};",
        ]
    else:
        sw = in_width
        lines += ["    // no rescaling: saturation only",
                  f"    wire signed [{sw - 1}:0] scaled = din;"]
    hi = (1 << (width - 1)) - 1
    lo = 1 << (width - 1)
    if sw > width:
        lines += [
            f"    assign dout = (scaled > $signed({sw}'sd{hi})) ? {width}'sd{hi}",
            f"                : (scaled < -$signed({sw}'sd{lo})) ? {width}'h{lo:x}",
            f"                : scaled[{width - 1}:0];",
        ]
    else:
        lines.append(f"    assign dout = {{{{{width - sw}{{scaled[{sw - 1}]}}}}, scaled}};"
                     if sw < width else "    assign dout = scaled;")
    lines.append("endmodule")
    return _join(lines)


def emit_dense(name: str, mem_path: str, *, n_in: int, n_out: int, dsps: int, rom_depth: int,
               has_bias: bool, bias_shift: int, width: int = 16,
               acc_width: int = DSP_ACC_BITS) -> str:
    """Fully connected unit: buffers the input vector, D MAC lanes per cycle over a weight ROM."""
    if dsps < 1:
        raise ValueError("dense unit needs at least one DSP")
    if has_bias:
        bias = [
            "    // biases follow the weights in the ROM; aligned to the accumulator scale",
            "    wire signed [W-1:0] bias_first = weight_rom[N_IN*N_OUT];",
            "    wire signed [W-1:0] bias_next = weight_rom[N_IN*N_OUT + o + 1];",
            "    wire signed [ACC_W-1:0] bias_first_acc = {{(ACC_W-W){bias_first[W-1]}}, bias_first} <<< BIAS_SHIFT;",
            "    wire signed [ACC_W-1:0] bias_next_acc = {{(ACC_W-W){bias_next[W-1]}}, bias_next} <<< BIAS_SHIFT;",
        ]
    else:
        bias = [
            "    wire signed [ACC_W-1:0] bias_first_acc = {ACC_W{1'b0}};",
            "    wire signed [ACC_W-1:0] bias_next_acc = {ACC_W{1'b0}};",
        ]
    lines = [
        f"// Dense unit: {n_in} -> {n_out} with {dsps} MAC lanes",
        f"module {name} #(",
        f"    parameter W = {width},",
        f"    parameter ACC_W = {acc_width},",
        f"    parameter N_IN = {n_in},",
        f"    parameter N_OUT = {n_out},",
        f"    parameter D = {dsps},",
        f"    parameter ROM_DEPTH = {rom_depth},",
        f"    parameter BIAS_SHIFT = {bias_shift}",
        ") (",
        "    input  wire             clk,",
        "    input  wire             rst,",
        "    input  wire [W-1:0]     in_data,",
        "    input  wire             in_valid,",
        "    output wire             in_ready,",
        "    output wire [ACC_W-1:0] out_data,",
        "    output wire             out_valid,",
        "    input  wire             out_ready",
        ");",
        "    localparam N_STEPS = (N_IN + D - 1) / D;",
        "    localparam [1:0] S_LOAD = 2'd0, S_MAC = 2'd1, S_OUT = 2'd2;",
        "",
        "    reg signed [W-1:0] in_ram [0:N_IN-1];",
        "    reg signed [W-1:0] weight_rom [0:ROM_DEPTH-1];",
        f'    initial $readmemh("{mem_path}", weight_rom);',
        "",
        "    reg [1:0] state;",
        "    reg [31:0] idx, step, o;",
        "    reg signed [ACC_W-1:0] acc;",
        *bias,
        "",
        "    wire signed [2*W-1:0] prod [0:D-1];",
        "    genvar g;",
        "    generate",
        "        for (g = 0; g < D; g = g + 1) begin : g_lane",
        "            wire [31:0] k = step * D + g;",
        "            assign prod[g] = (k < N_IN) ? in_ram[k] * weight_rom[o*N_IN + k] : {(2*W){1'b0}};",
        "        end",
        "    endgenerate",
        "",
        "    reg signed [ACC_W-1:0] lane_sum;",
        "    integer i;",
        "    always @(*) begin",
        "        lane_sum = {ACC_W{1'b0}};",
        "        for (i = 0; i < D; i = i + 1)",
        "            lane_sum = lane_sum + prod[i];",
        "    end",
        "",
        "    assign in_ready = (state == S_LOAD);",
        "    assign out_valid = (state == S_OUT);",
        "    assign out_data = acc;",
        "    always @(posedge clk) begin",
        "        if (rst) begin",
        "            state <= S_LOAD;",
        "            idx <= 0;",
        "            step <= 0;",
        "            o <= 0;",
        "            acc <= 0;",
        "        end else begin",
        "            case (state)",
        "                S_LOAD: if (in_valid) begin",
        "                    in_ram[idx] <= in_data;",
        "                    if (idx == N_IN - 1) begin",
        "                        idx <= 0;",
        "                        o <= 0;",
        "                        step <= 0;",
        "                        acc <= bias_first_acc;",
        "                        state <= S_MAC;",
        "                    end else begin",
        "                        idx <= idx + 1;",
        "                    end",
        "                end",
        "                S_MAC: begin",
        "                    acc <= acc + lane_sum;",
        "                    if (step == N_STEPS - 1)",
        "                        state <= S_OUT;",
        "                    else",
        "                        step <= step + 1;",
        "                end",
        "                S_OUT: if (out_ready) begin",
        "                    step <= 0;",
        "                    if (o == N_OUT - 1) begin",
        "                        state <= S_LOAD;",
        "                    end else begin",
        "                        o <= o + 1;",
        "                        acc <= bias_next_acc;",
        "                        state <= S_MAC;",
        "                    end",
        "                end",
        "                default: state <= S_LOAD;",
        "            endcase",
        "        end",
        "    end",
        "endmodule",
    ]
    return _join(lines)


def emit_arbiter(n_clients: int, name: str = "conv_arbiter") -> str:
    """Fixed-priority grant (lowest layer index first); a grant is held until that client is done."""
    if n_clients < 1:
        raise ValueError("arbiter needs at least one client")
    return _join([
        f"// Shared conv unit arbiter for {n_clients} layers: fixed priority, busy lockout",
        f"module {name} #(",
        f"    parameter N = {n_clients}",
        ") (",
        "    input  wire         clk,",
        "    input  wire         rst,",
        "    input  wire [N-1:0] req,",
        "    input  wire [N-1:0] done,",
        "    output reg  [N-1:0] grant,",
        "    output wire         busy",
        ");",
        "    // isolate the lowest set request bit",
        "    wire [N-1:0] pick = req & (~req + 1'b1);",
        "    assign busy = |grant;",
        "    always @(posedge clk) begin",
        "        if (rst)",
        "            grant <= {N{1'b0}};",
        "        else if (busy) begin",
        "            if (|(grant & done))",
        "                grant <= {N{1'b0}};",
        "        end else begin",
        "            grant <= pick;",
        "        end",
        "    end",
        "",
        "    // synthesis translate_off",
        "    always @(posedge clk)",
        "        if (!rst && ((grant & (grant - 1'b1)) != {N{1'b0}}))",
        '            $display("ERROR: %m grant not one-hot: %b", grant);',
        "    // synthesis translate_on",
        "endmodule",
    ])


def emit_unit(kind: str, **params) -> str:
    """Dispatch by unit kind: relu, maxpool, precision_adjust, dense, arbiter, conv."""
    if kind == "relu":
        return emit_relu(params.get("width", 16))
    if kind == "maxpool":
        return emit_maxpool(params["pool"], params.get("width", 16))
    if kind == "precision_adjust":
        return emit_precision_adjust(params.get("name", "precision_adjust"), params["shift"],
                                     params.get("in_width", DSP_ACC_BITS), params.get("width", 16))
    if kind == "dense":
        return emit_dense(**params)
    if kind == "arbiter":
        return emit_arbiter(params["n_clients"])
    if kind == "conv":
        return emit_conv_unit(params["dsps"], params.get("width", 16))
    raise ValueError(f"unknown unit kind {kind!r}")
