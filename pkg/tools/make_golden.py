"""Regenerate the golden checkpoint fixtures under tests/golden/.

The fixtures pin cross-platform byte stability of the checkpoint format and
the numerical stability of inference: a short deterministic training run on
a tiny synthetic workload, saved with its inputs and frozen predictions.
"""

import hashlib
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fcn_ctr.checkpoint import load_checkpoint, save_checkpoint
from fcn_ctr.features import (FieldSpec, build_schema, encode, split,
                              synth_interaction_data, write_csv)
from fcn_ctr.model import ModelConfig
from fcn_ctr.numerics import Rng, derive_seed
from fcn_ctr.training import TrainConfig, predict_scores, train

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "golden")


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = Rng(derive_seed(2024, "synth"))
    records, _ = synth_interaction_data(3, 4, 2, 400, rng)
    specs = [FieldSpec(f"f{j}") for j in range(3)]
    schema = build_schema(records, specs)
    batch = encode(records, schema)
    tr, va, te = split(batch, (0.8, 0.1, 0.1), Rng(derive_seed(2024, "split")))

    config = ModelConfig(d=4, lcn_depth=1, ecn_depth=2, mask_mode="paper",
                         dropout_rate=0.1, seed=2024)
    tcfg = TrainConfig(learning_rate=0.003, batch_size=64, max_epochs=3, patience=3)
    params, _ = train(tr, va, config, tcfg, log=lambda s: None)

    ckpt_path = os.path.join(OUT, "model.ckpt")
    save_checkpoint(ckpt_path, params, config, schema)
    # freeze predictions from the float32-stored params, i.e. what any
    # consumer of the checkpoint file will compute
    params, config, schema = load_checkpoint(ckpt_path)

    inputs = records[:16]
    write_csv(os.path.join(OUT, "inputs.csv"),
              [f"f{j}" for j in range(3)] + ["label"], inputs)
    pred_batch = encode(inputs, schema)
    y, yd, ys = predict_scores(pred_batch, params, config)
    with open(os.path.join(OUT, "predictions.csv"), "w", encoding="utf-8") as fh:
        fh.write("y_hat,y_hat_deep,y_hat_shallow\n")
        for a, b, c in zip(y, yd, ys):
            fh.write(f"{a:.17g},{b:.17g},{c:.17g}\n")

    digest = hashlib.sha256(open(ckpt_path, "rb").read()).hexdigest()
    with open(ckpt_path + ".sha256", "w") as fh:
        fh.write(digest + "\n")
    print("golden fixtures written to", OUT)
    print("checkpoint sha256:", digest)


if __name__ == "__main__":
    main()
