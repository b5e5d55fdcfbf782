#!/usr/bin/env python3
"""Regenerate the committed test fixtures under fixtures/.

Writes small layers-format bundles (model.json, metadata.json, weights.bin)
with seeded weights, renders golden input images, and runs every golden
image through Keras to record reference probabilities.

The C++ build never runs this script; its output is committed.

    TF_CPP_MIN_LOG_LEVEL=3 python3 scripts/make_fixtures.py
"""

import json
import os
import pathlib
import struct

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
os.environ.setdefault("TF_ENABLE_ONEDNN_OPTS", "0")

import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

import keras  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

METADATA_TEMPLATE = {
    "tfjsVersion": "1.3.1",
    "tmVersion": "2.4.5",
    "packageVersion": "0.8.4",
    "packageName": "@teachablemachine/image",
    "timeStamp": "2021-05-04T12:00:00.000Z",
    "userMetadata": {},
    "modelName": "tm-my-image-model",
}


def layer(class_name, name, **config):
    cfg = {"name": name, "trainable": True, "dtype": "float32"}
    cfg.update(config)
    return {"class_name": class_name, "config": cfg}


def input_layer(name, side):
    return {
        "class_name": "InputLayer",
        "config": {
            "batch_input_shape": [None, side, side, 3],
            "dtype": "float32",
            "sparse": False,
            "name": name,
        },
    }


def topology(root):
    return {
        "class_name": root["class_name"],
        "config": root["config"],
        "keras_version": "tfjs-layers 1.3.1",
        "backend": "tensor_flow.js",
    }


def write_bundle(out, root, weights, labels, side):
    out.mkdir(parents=True, exist_ok=True)
    manifest = [{"paths": ["weights.bin"], "weights": []}]
    blob = bytearray()
    for name, arr in weights:
        arr = np.asarray(arr, dtype="<f4")
        manifest[0]["weights"].append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32"})
        blob += arr.tobytes(order="C")
    model = {
        "format": "layers-model",
        "generatedBy": "keras v2.4.0",
        "convertedBy": "TensorFlow.js Converter v1.3.1",
        "modelTopology": topology(root),
        "weightsManifest": manifest,
    }
    (out / "model.json").write_text(json.dumps(model, indent=1) + "\n")
    (out / "weights.bin").write_bytes(bytes(blob))
    meta = dict(METADATA_TEMPLATE)
    meta["labels"] = labels
    meta["imageSize"] = side
    (out / "metadata.json").write_text(json.dumps(meta, indent=1) + "\n")


def golden_images(rng, side):
    rand = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
    gray = np.full((side, side, 3), 128, dtype=np.uint8)
    ys, xs = np.mgrid[0:side, 0:side]
    grad = np.stack([xs * 255 // max(side - 1, 1),
                     ys * 255 // max(side - 1, 1),
                     (xs + ys) * 255 // max(2 * side - 2, 1)],
                    axis=-1).astype(np.uint8)
    return [("random.png", rand), ("gray.png", gray), ("gradient.png", grad)]


def normalize(pixels):
    return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def write_goldens(out, fixture_id, seed, layer_count, model, labels, images):
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for fname, pixels in images:
        Image.fromarray(pixels, "RGB").save(img_dir / fname)
        probs = model.predict(normalize(pixels)[None], verbose=0)[0]
        probs = probs.astype(np.float64)
        cases.append({
            "image": "images/" + fname,
            "probabilities": [round(float(p), 6) for p in probs],
            "argmax_label": labels[int(np.argmax(probs))],
        })
    golden = {
        "fixture": fixture_id,
        "seed": seed,
        "layer_count": layer_count,
        "cases": cases,
    }
    (out / "golden.json").write_text(json.dumps(golden, indent=1) + "\n")


def gen_tiny_dense(seed=1):
    rng = np.random.default_rng(seed)
    side, labels = 4, ["plastic garbage", "metal"]
    kernel = rng.normal(0.0, 0.3, size=(side * side * 3, 2)).astype(np.float32)
    bias = rng.normal(0.0, 0.5, size=(2,)).astype(np.float32)

    root = {
        "class_name": "Sequential",
        "config": {
            "name": "sequential_1",
            "layers": [
                input_layer("input_1", side),
                layer("Flatten", "flatten_Flatten1"),
                layer("Dense", "dense_Dense1", units=2, activation="softmax",
                      use_bias=True),
            ],
        },
    }
    out = ROOT / "tiny_dense"
    write_bundle(out, root, [("dense_Dense1/kernel", kernel),
                             ("dense_Dense1/bias", bias)], labels, side)

    inp = keras.Input((side, side, 3))
    x = keras.layers.Flatten()(inp)
    dense = keras.layers.Dense(2, activation="softmax")
    x = dense(x)
    model = keras.Model(inp, x)
    dense.set_weights([kernel, bias])
    write_goldens(out, "tiny_dense", seed, 3, model, labels,
                  golden_images(rng, side))


def mini_conv_layers():
    return [
        layer("ZeroPadding2D", "conv_pad", padding=[[0, 1], [0, 1]],
              data_format="channels_last"),
        layer("Conv2D", "conv1", filters=4, kernel_size=[3, 3],
              strides=[2, 2], padding="valid", data_format="channels_last",
              dilation_rate=[1, 1], activation="linear", use_bias=False),
        layer("BatchNormalization", "conv1_bn", axis=-1, momentum=0.999,
              epsilon=0.001, center=True, scale=True),
        layer("ReLU", "conv1_relu", max_value=6.0, negative_slope=0.0,
              threshold=0.0),
        layer("DepthwiseConv2D", "dw1", kernel_size=[3, 3], strides=[1, 1],
              padding="same", data_format="channels_last",
              dilation_rate=[1, 1], depth_multiplier=2, activation="linear",
              use_bias=True),
        layer("GlobalAveragePooling2D", "gap", data_format="channels_last"),
    ]


def with_inbound(layers, input_name):
    wired, prev = [], input_name
    for spec in layers:
        spec = dict(spec)
        spec["name"] = spec["config"]["name"]
        spec["inbound_nodes"] = [[[prev, 0, 0, {}]]]
        wired.append(spec)
        prev = spec["name"]
    return wired, prev


def gen_mini_conv(seed=2):
    rng = np.random.default_rng(seed)
    side, labels = 8, ["cardboard", "glass", "paper"]
    conv_k = rng.normal(0.0, 0.4, size=(3, 3, 3, 4)).astype(np.float32)
    gamma = rng.uniform(0.5, 1.5, size=(4,)).astype(np.float32)
    beta = rng.normal(0.0, 0.2, size=(4,)).astype(np.float32)
    mean = rng.normal(0.0, 0.2, size=(4,)).astype(np.float32)
    var = rng.uniform(0.5, 2.0, size=(4,)).astype(np.float32)
    dw_k = rng.normal(0.0, 0.4, size=(3, 3, 4, 2)).astype(np.float32)
    dw_b = rng.normal(0.0, 0.1, size=(8,)).astype(np.float32)
    dense_k = rng.normal(0.0, 0.6, size=(8, 3)).astype(np.float32)
    dense_b = rng.normal(0.0, 0.2, size=(3,)).astype(np.float32)
    weights = [
        ("conv1/kernel", conv_k),
        ("conv1_bn/gamma", gamma),
        ("conv1_bn/beta", beta),
        ("conv1_bn/moving_mean", mean),
        ("conv1_bn/moving_variance", var),
        ("dw1/depthwise_kernel", dw_k),
        ("dw1/bias", dw_b),
        ("dense_Dense1/kernel", dense_k),
        ("dense_Dense1/bias", dense_b),
    ]
    head = layer("Dense", "dense_Dense1", units=3, activation="softmax",
                 use_bias=True)

    flat = {
        "class_name": "Sequential",
        "config": {
            "name": "sequential_flat",
            "layers": [input_layer("input_1", side)] + mini_conv_layers()
                      + [head],
        },
    }

    inp = input_layer("input_1", side)
    inp["name"] = "input_1"
    inp["inbound_nodes"] = []
    body, last = with_inbound(mini_conv_layers(), "input_1")
    features = {
        "class_name": "Model",
        "config": {
            "name": "features",
            "layers": [inp] + body,
            "input_layers": [["input_1", 0, 0]],
            "output_layers": [[last, 0, 0]],
        },
    }
    nested = {
        "class_name": "Sequential",
        "config": {"name": "sequential_outer", "layers": [features, head]},
    }

    inp_t = keras.Input((side, side, 3))
    x = keras.layers.ZeroPadding2D(((0, 1), (0, 1)))(inp_t)
    conv = keras.layers.Conv2D(4, 3, strides=2, padding="valid",
                               use_bias=False)
    x = conv(x)
    bn = keras.layers.BatchNormalization(epsilon=0.001)
    x = bn(x)
    x = keras.layers.ReLU(max_value=6.0)(x)
    dw = keras.layers.DepthwiseConv2D(3, padding="same", depth_multiplier=2)
    x = dw(x)
    x = keras.layers.GlobalAveragePooling2D()(x)
    dense = keras.layers.Dense(3, activation="softmax")
    x = dense(x)
    model = keras.Model(inp_t, x)
    conv.set_weights([conv_k])
    bn.set_weights([gamma, beta, mean, var])
    dw.set_weights([dw_k, dw_b])
    dense.set_weights([dense_k, dense_b])

    images = golden_images(rng, side)
    for fixture_id, root in (("mini_conv_flat", flat),
                             ("mini_conv_nested", nested)):
        out = ROOT / fixture_id
        write_bundle(out, root, weights, labels, side)
        write_goldens(out, fixture_id, seed, 8, model, labels, images)


def gen_vision_images():
    out = ROOT / "images"
    out.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (1, 1), (255, 255, 255)).save(out / "white_1x1.png")
    grid = np.zeros((8, 8, 3), dtype=np.uint8)
    for y in range(8):
        for x in range(8):
            grid[y, x] = (x * 32, y * 32, (x + y) * 16)
    Image.fromarray(grid, "RGB").save(out / "grid_8x8.png")
    rgba = np.dstack([grid, np.full((8, 8), 77, dtype=np.uint8)])
    Image.fromarray(rgba, "RGBA").save(out / "grid_8x8_rgba.png")
    Image.fromarray(grid[:, :, 1], "L").save(out / "gray_8x8.png")
    solid = Image.new("RGB", (16, 16), (200, 40, 90))
    solid.save(out / "solid_16x16.jpg", quality=95)
    solid.save(out / "solid_16x16_progressive.jpg", quality=95,
               progressive=True)
    wide = np.zeros((30, 50, 3), dtype=np.uint8)
    wide[:, :] = (10, 180, 240)
    Image.fromarray(wide, "RGB").save(out / "uniform_50x30.png")


def main():
    gen_tiny_dense()
    gen_mini_conv()
    gen_vision_images()


if __name__ == "__main__":
    main()
