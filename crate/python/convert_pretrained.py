#!/usr/bin/env python3
"""Convert reference backbone weights into the harness's tensor archive.

Input is a NumPy ``.npz`` file mapping tensor names to float32 arrays. Names
must match the harness's parameter names (convolution kernels are
``(out, in/groups, kh, kw)``, dense kernels ``(out, in)``, batch-norm tensors
``gamma`` / ``beta`` / ``running_mean`` / ``running_var``). List a model's
expected names with:

    python3 - <<'EOF'
    import numtabench_py
    m = numtabench_py.Model.build("resnet50")
    print("\n".join(m.parameter_names()))
    EOF

When converting from another framework, export its state dict to ``.npz``
first and supply ``--rename mapping.json`` (a JSON object of source name →
harness name); tensors can also be transposed on the way in with
``--transpose name=1,0,2,3`` for layout differences. Loading is lenient:
tensors that match by name and shape are used, everything else is reported.

Example:

    python3 python/convert_pretrained.py weights.npz efficientnetb0 out.ntar
    numtabench train --config cfg.json --pretrained out.ntar
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"NTAR"
FORMAT_VERSION = 1


def write_archive(path, tensors, metadata):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            array = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", array.ndim))
            for dim in array.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(array.tobytes())
    with open(str(path) + ".json", "w") as fh:
        json.dump(metadata, fh, indent=2)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("npz", help="input .npz of name -> float32 array")
    parser.add_argument("kind", help="model kind the weights belong to")
    parser.add_argument("out", help="output archive path (.ntar)")
    parser.add_argument(
        "--rename",
        help="JSON file mapping source tensor names to harness names",
    )
    parser.add_argument(
        "--transpose",
        action="append",
        default=[],
        metavar="NAME=AXES",
        help="transpose a tensor before writing, e.g. head.weight=1,0",
    )
    args = parser.parse_args()

    rename = {}
    if args.rename:
        with open(args.rename) as fh:
            rename = json.load(fh)
    transpose = {}
    for item in args.transpose:
        name, _, axes = item.partition("=")
        transpose[name] = tuple(int(a) for a in axes.split(","))

    source = np.load(args.npz)
    tensors = {}
    for key in source.files:
        name = rename.get(key, key)
        array = np.asarray(source[key], dtype=np.float32)
        if name in transpose:
            array = array.transpose(transpose[name])
        if name in tensors:
            sys.exit(f"duplicate target name {name!r}")
        tensors[name] = array

    metadata = {
        "kind": args.kind,
        "config": {
            "input_height": 96,
            "input_width": 96,
            "input_channels": 3,
            "num_classes": 10,
            "weight_init": {"random": {"seed": 0}},
        },
        "format_version": FORMAT_VERSION,
    }
    write_archive(args.out, tensors, metadata)
    total = sum(int(np.prod(t.shape)) for t in tensors.values())
    print(f"wrote {len(tensors)} tensors ({total} values) to {args.out}")


if __name__ == "__main__":
    main()
