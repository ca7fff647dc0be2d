"""Architecture descriptors and cost counting.

A descriptor is a line-oriented DAG of layers (conv / c3 / upsample /
concat / detect) in topological order.  Shape propagation validates the
graph, ``param_count``/``mac_count`` price it, and ``prune_to_heads``
keeps only the layers that still feed a surviving detection head
(reachability-based dead-code elimination).

Cost conventions:
  - conv params: k*k*c_in*c_out (+ c_out with bias); MACs multiply by the
    output area.  Backbone/neck convs carry no bias (they are normally
    followed by normalization); detect layers are 1x1 convs with bias.
  - c3 blocks expand to a fixed cross-stage form with hidden width
    c_out/2: two 1x1 entry convs, n bottlenecks (1x1 then 3x3, residual
    add), and a 1x1 merge conv over the concatenated halves.
  - upsample/concat (and pooling, which the grammar omits) are free.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

INPUT_ID = -1
INPUT_CHANNELS = 3
PROBE_WIDTH = 416

KINDS = ("conv", "c3", "upsample", "concat", "detect")


class DescriptorError(ValueError):
    """Malformed descriptor text or graph (carries a line number if known)."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ResolutionError(ValueError):
    """Input width incompatible with the descriptor's total stride."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer; unused fields stay None for kinds that lack them."""

    id: int
    kind: str
    srcs: tuple[int, ...]
    c_in: Optional[int] = None
    c_out: Optional[int] = None
    k: Optional[int] = None
    s: Optional[int] = None
    d: Optional[int] = None
    bias: bool = False
    repeat: Optional[int] = None
    factor: Optional[int] = None
    head_index: Optional[int] = None
    outputs: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DescriptorError(f"unknown layer kind {self.kind!r}")
        for name in ("c_in", "c_out", "k", "s", "d", "repeat", "factor", "outputs"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise DescriptorError(f"layer {self.id}: {name} must be >= 1")


@dataclass(frozen=True)
class Shape:
    channels: int
    height: int
    width: int


@dataclass(frozen=True)
class ArchDescriptor:
    """Validated layer list in topological order plus the head map."""

    name: str
    layers: tuple[LayerSpec, ...]
    head_map: dict  # head index -> detect layer id

    def layer(self, lid: int) -> LayerSpec:
        return self._by_id[lid]

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {l.id: l for l in self.layers})

    @property
    def max_stride(self) -> int:
        _, strides = propagate(self, PROBE_WIDTH)
        return max(strides.values())


def _conv_out_size(size: int, k: int, s: int, d: int) -> int:
    # Same-padding convention; floor((d*(k-1))/2) also covers even k
    # (needed for 6x6 stems), exact for odd k.
    pad = (d * (k - 1)) // 2
    return (size + 2 * pad - d * (k - 1) - 1) // s + 1


def propagate(a: ArchDescriptor, width: int) -> tuple[dict, dict]:
    """Shape-check the DAG at a square probe input; returns (shapes, strides).

    strides maps layer id to the cumulative downsampling factor of its
    output (width / feature width), tracked exactly as a rational so
    upsampling past the input resolution is representable.
    """
    in_channels = next(
        (l.c_in for l in a.layers if INPUT_ID in l.srcs and l.c_in is not None),
        INPUT_CHANNELS)
    shapes: dict[int, Shape] = {INPUT_ID: Shape(in_channels, width, width)}
    strides: dict[int, int] = {INPUT_ID: 1}
    for layer in a.layers:
        for s in layer.srcs:
            if s not in shapes:
                raise DescriptorError(f"layer {layer.id}: source {s} not defined earlier")
        if layer.kind == "conv":
            src = shapes[layer.srcs[0]]
            if src.channels != layer.c_in:
                raise DescriptorError(
                    f"layer {layer.id}: declared c_in {layer.c_in} but source "
                    f"{layer.srcs[0]} has {src.channels} channels"
                )
            h = _conv_out_size(src.height, layer.k, layer.s, layer.d)
            w = _conv_out_size(src.width, layer.k, layer.s, layer.d)
            if h < 1 or w < 1:
                raise DescriptorError(f"layer {layer.id}: output collapses to zero size")
            shapes[layer.id] = Shape(layer.c_out, h, w)
        elif layer.kind == "c3":
            src = shapes[layer.srcs[0]]
            if src.channels != layer.c_in:
                raise DescriptorError(
                    f"layer {layer.id}: declared c_in {layer.c_in} but source has "
                    f"{src.channels} channels"
                )
            shapes[layer.id] = Shape(layer.c_out, src.height, src.width)
        elif layer.kind == "upsample":
            src = shapes[layer.srcs[0]]
            shapes[layer.id] = Shape(src.channels, src.height * layer.factor,
                                     src.width * layer.factor)
        elif layer.kind == "concat":
            parts = [shapes[s] for s in layer.srcs]
            sizes = {(p.height, p.width) for p in parts}
            if len(sizes) != 1:
                raise DescriptorError(
                    f"layer {layer.id}: concat sources {list(layer.srcs)} have "
                    f"mismatched spatial sizes {sorted(sizes)}"
                )
            shapes[layer.id] = Shape(sum(p.channels for p in parts),
                                     parts[0].height, parts[0].width)
        elif layer.kind == "detect":
            src = shapes[layer.srcs[0]]
            shapes[layer.id] = Shape(layer.outputs, src.height, src.width)
        strides[layer.id] = width // shapes[layer.id].width if shapes[layer.id].width else 0
    return shapes, strides


def _c3_params(c_in: int, c_out: int, n: int) -> int:
    ch = c_out // 2
    entry = 2 * c_in * ch          # two 1x1 entry convs
    merge = 2 * ch * c_out         # 1x1 merge over both halves
    bottlenecks = n * (ch * ch + 9 * ch * ch)
    return entry + merge + bottlenecks


def layer_params(layer: LayerSpec) -> int:
    if layer.kind == "conv":
        p = layer.k * layer.k * layer.c_in * layer.c_out
        return p + (layer.c_out if layer.bias else 0)
    if layer.kind == "c3":
        return _c3_params(layer.c_in, layer.c_out, layer.repeat)
    if layer.kind == "detect":
        return layer.c_in * layer.outputs + layer.outputs  # 1x1 conv with bias
    return 0


def _ensure_detect_cin(a: ArchDescriptor) -> ArchDescriptor:
    if any(l.kind == "detect" and l.c_in is None for l in a.layers):
        return _fill_detect_cin(a)
    return a


def param_count(a: ArchDescriptor) -> int:
    """Total learnable parameters (resolution independent)."""
    a = _ensure_detect_cin(a)
    return sum(layer_params(l) for l in a.layers)


@dataclass(frozen=True)
class CostReport:
    """Parameter and multiply-accumulate totals with a per-layer breakdown.

    ``flops_2x`` counts each MAC as two floating-point operations; both
    units are reported because published FLOP figures use either one.
    """

    name: str
    width_in: int
    params: int
    macs: int
    per_layer: tuple  # (id, kind, params, macs) in layer order

    @property
    def flops_2x(self) -> int:
        return 2 * self.macs


def mac_count(a: ArchDescriptor, width_in: int) -> CostReport:
    """Price the descriptor at a square input of the given width."""
    a = _ensure_detect_cin(a)
    if width_in < 1:
        raise ResolutionError(f"width must be >= 1, got {width_in}")
    divisor = a.max_stride
    if width_in % divisor != 0:
        raise ResolutionError(
            f"width {width_in} not divisible by the descriptor's total stride {divisor}"
        )
    shapes, _ = propagate(a, width_in)
    rows = []
    total_p = total_m = 0
    for layer in a.layers:
        p = layer_params(layer)
        if layer.kind == "conv":
            out = shapes[layer.id]
            m = layer.k * layer.k * layer.c_in * layer.c_out * out.height * out.width
        elif layer.kind == "c3":
            out = shapes[layer.id]
            m = _c3_params(layer.c_in, layer.c_out, layer.repeat) * out.height * out.width
        elif layer.kind == "detect":
            out = shapes[layer.id]
            m = layer.c_in * layer.outputs * out.height * out.width
        else:
            m = 0
        rows.append((layer.id, layer.kind, p, m))
        total_p += p
        total_m += m
    return CostReport(a.name, width_in, total_p, total_m, tuple(rows))


def _parse_int(tok: str, what: str, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DescriptorError(f"{what} must be an integer, got {tok!r}", line) from None


def parse_descriptor_text(text: str, name: str = "descriptor",
                          probe: int = PROBE_WIDTH) -> ArchDescriptor:
    """Parse and validate descriptor text (see the module docstring grammar)."""
    layers: list[LayerSpec] = []
    seen_ids = set()
    head_map: dict[int, int] = {}
    input_consumers: list[tuple[int, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind not in KINDS:
            raise DescriptorError(f"unknown layer kind {kind!r}", lineno)
        lid = _parse_int(tok[1], "id", lineno) if len(tok) > 1 else None
        if lid is None:
            raise DescriptorError("missing layer id", lineno)
        if lid in seen_ids or lid == INPUT_ID:
            raise DescriptorError(f"duplicate or reserved id {lid}", lineno)

        try:
            if kind == "conv":
                if len(tok) not in (8, 9):
                    raise DescriptorError(
                        "conv takes: id src c_in c_out k s d [bias]", lineno)
                bias = False
                if len(tok) == 9:
                    if tok[8] != "bias":
                        raise DescriptorError(f"trailing token must be 'bias', got {tok[8]!r}", lineno)
                    bias = True
                layer = LayerSpec(lid, "conv", (_parse_int(tok[2], "src", lineno),),
                                  c_in=_parse_int(tok[3], "c_in", lineno),
                                  c_out=_parse_int(tok[4], "c_out", lineno),
                                  k=_parse_int(tok[5], "k", lineno),
                                  s=_parse_int(tok[6], "s", lineno),
                                  d=_parse_int(tok[7], "d", lineno), bias=bias)
            elif kind == "c3":
                if len(tok) != 6:
                    raise DescriptorError("c3 takes: id src c_in c_out n", lineno)
                layer = LayerSpec(lid, "c3", (_parse_int(tok[2], "src", lineno),),
                                  c_in=_parse_int(tok[3], "c_in", lineno),
                                  c_out=_parse_int(tok[4], "c_out", lineno),
                                  repeat=_parse_int(tok[5], "n", lineno))
            elif kind == "upsample":
                if len(tok) != 4:
                    raise DescriptorError("upsample takes: id src factor", lineno)
                layer = LayerSpec(lid, "upsample", (_parse_int(tok[2], "src", lineno),),
                                  factor=_parse_int(tok[3], "factor", lineno))
            elif kind == "concat":
                if len(tok) != 3:
                    raise DescriptorError("concat takes: id src1,src2,...", lineno)
                srcs = tuple(_parse_int(s, "src", lineno) for s in tok[2].split(","))
                if len(srcs) < 2:
                    raise DescriptorError("concat needs at least two sources", lineno)
                layer = LayerSpec(lid, "concat", srcs)
            else:  # detect
                if len(tok) != 5:
                    raise DescriptorError(
                        "detect takes: id src head_index outputs_per_location", lineno)
                head = _parse_int(tok[3], "head_index", lineno)
                if head not in (1, 2, 3, 4, 5):
                    raise DescriptorError(f"head_index must be 1..5, got {head}", lineno)
                if head in head_map:
                    raise DescriptorError(f"head {head} declared twice", lineno)
                layer = LayerSpec(lid, "detect", (_parse_int(tok[2], "src", lineno),),
                                  head_index=head,
                                  outputs=_parse_int(tok[4], "outputs", lineno))
                head_map[head] = lid
        except DescriptorError:
            raise
        except ValueError as e:
            raise DescriptorError(str(e), lineno) from None

        for s in layer.srcs:
            if s != INPUT_ID and s not in seen_ids:
                raise DescriptorError(f"forward or dangling reference to {s}", lineno)
            if s == INPUT_ID and layer.kind in ("conv", "c3"):
                input_consumers.append((lineno, layer.c_in))
        seen_ids.add(lid)
        layers.append(layer)

    if input_consumers:
        # all direct consumers of the input must agree on its channel count
        first = input_consumers[0][1]
        for lineno, c_in in input_consumers[1:]:
            if c_in != first:
                raise DescriptorError(
                    f"layers reading the input disagree on its channels "
                    f"({first} vs {c_in})", lineno)

    desc = ArchDescriptor(name, tuple(layers), head_map)
    propagate(desc, probe)  # raises DescriptorError on any shape inconsistency
    return desc


def parse_descriptor(path, probe: int = PROBE_WIDTH) -> ArchDescriptor:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise DescriptorError(f"cannot read {path}: {e}") from e
    return parse_descriptor_text(text, name=p.stem, probe=probe)


def _resolve_heads(heads) -> tuple[int, ...]:
    # Accepts a HeadConfig-like object (has .heads), ints, or 'H3' strings.
    if hasattr(heads, "heads"):
        heads = heads.heads
    out = []
    for h in heads:
        if isinstance(h, str):
            h = int(h.upper().lstrip("H"))
        out.append(int(h))
    if not out:
        raise DescriptorError("empty head set")
    if any(h not in (1, 2, 3, 4, 5) for h in out):
        raise DescriptorError(f"head indices must be 1..5, got {sorted(set(out))}")
    return tuple(sorted(set(out)))


def _attach_head(a: ArchDescriptor, head: int) -> ArchDescriptor:
    """Add a detect layer for a head the descriptor lacks.

    The head goes on the deepest (last in topological order) non-detect
    layer whose cumulative stride matches 2**head; outputs-per-location
    is copied from the existing detect layers.
    """
    shapes, strides = propagate(a, PROBE_WIDTH)
    want = 2 ** head
    candidates = [l for l in a.layers if l.kind != "detect" and strides[l.id] == want]
    if not candidates:
        raise DescriptorError(
            f"head H{head} requested but no stage of stride {want} exists in {a.name!r}")
    src = candidates[-1]
    outs = sorted({l.outputs for l in a.layers if l.kind == "detect"})
    outputs = outs[0] if outs else 45
    new_id = max(l.id for l in a.layers) + 1
    det = LayerSpec(new_id, "detect", (src.id,),
                    c_in=shapes[src.id].channels, head_index=head, outputs=outputs)
    head_map = dict(a.head_map)
    head_map[head] = new_id
    return ArchDescriptor(a.name, a.layers + (det,), head_map)


def prune_to_heads(a: ArchDescriptor, heads) -> ArchDescriptor:
    """Keep the requested heads and eliminate every layer feeding none of them.

    Dead-code elimination is reachability on the DAG: a layer survives iff
    some surviving detect layer is among its (transitive) consumers.  The
    result is deterministic, idempotent, and independent of removal order.
    """
    want = _resolve_heads(heads)
    for h in want:
        if h not in a.head_map:
            a = _attach_head(a, h)

    keep_dets = {a.head_map[h] for h in want}
    by_id = {l.id: l for l in a.layers}
    live: set[int] = set()
    stack = list(keep_dets)
    while stack:
        lid = stack.pop()
        if lid in live or lid == INPUT_ID:
            continue
        live.add(lid)
        stack.extend(by_id[lid].srcs)

    layers = tuple(l for l in a.layers if l.id in live and
                   (l.kind != "detect" or l.id in keep_dets))
    head_map = {h: a.head_map[h] for h in want}
    label = ",".join(f"H{h}" for h in want)
    base = a.name.split("[", 1)[0]
    pruned = ArchDescriptor(f"{base}[{label}]", layers, head_map)
    propagate(pruned, PROBE_WIDTH)  # re-validate
    return pruned


def _fill_detect_cin(a: ArchDescriptor) -> ArchDescriptor:
    """Record each detect layer's source channels so layer_params works."""
    shapes, _ = propagate(a, PROBE_WIDTH)
    layers = tuple(
        replace(l, c_in=shapes[l.srcs[0]].channels) if l.kind == "detect" else l
        for l in a.layers
    )
    return ArchDescriptor(a.name, layers, a.head_map)


def load_descriptor(path, probe: int = PROBE_WIDTH) -> ArchDescriptor:
    """parse_descriptor plus detect-input channel resolution (normal entry point)."""
    return _fill_detect_cin(parse_descriptor(path, probe))


def load_descriptor_text(text: str, name: str = "descriptor",
                         probe: int = PROBE_WIDTH) -> ArchDescriptor:
    return _fill_detect_cin(parse_descriptor_text(text, name, probe))


def bundled_descriptor_path(name: str) -> Path:
    """Path of a descriptor shipped with the package (data/*.arch)."""
    p = Path(__file__).parent / "data" / f"{name}.arch"
    if not p.exists():
        raise DescriptorError(f"no bundled descriptor named {name!r}")
    return p


def bundled_descriptor(name: str) -> ArchDescriptor:
    return load_descriptor(bundled_descriptor_path(name))


def backbone_stages(a: ArchDescriptor, probe: int = PROBE_WIDTH) -> dict:
    """Stride -> (layer id, channels) for the deepest backbone stage per stride.

    The backbone is the prefix of the layer list before the first
    upsample; 1x1 laterals that exist only to feed an upsample are not
    stages themselves.
    """
    shapes, strides = propagate(a, probe)
    feeds_upsample = set()
    for layer in a.layers:
        if layer.kind == "upsample":
            feeds_upsample.add(layer.srcs[0])
    stages: dict[int, tuple[int, int]] = {}
    for layer in a.layers:
        if layer.kind == "upsample":
            break
        if layer.kind == "detect" or layer.id in feeds_upsample:
            continue
        st = strides[layer.id]
        if st >= 2:
            stages[st] = (layer.id, shapes[layer.id].channels)
    return stages


