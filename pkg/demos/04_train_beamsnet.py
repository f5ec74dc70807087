"""Train a reduced BeamsNet on a short synthetic corpus.

The network sees a window of raw IMU samples and the LS velocity of the
current ping, and regresses the true body velocity. A reduced corpus and
hidden layer keep this demo under a minute; the full-size model is trained
the same way with more data.
"""

import numpy as np

from deepdvl import beamsnet as bn
from deepdvl import metrics as mt
from deepdvl import pipeline

train = pipeline.training_corpus(seeds=range(4), duration=600.0)
test = pipeline.training_corpus(seeds=range(100, 102), duration=600.0)
print(f"training windows {len(train.truth)}, test windows {len(test.truth)}")

params, history, _ = bn.train(train, bn.TrainConfig(epochs=30, seed=0), hidden=(128, 32))
print(f"best validation loss {history.best_val[-1]:.3e} at epoch {history.best_epoch}")
print("residual sigma per axis:", params.residual_sigma.round(5))

pred = bn.evaluate(params, test)
print("\nheld-out metrics on the velocity norm:")
for name, est in (("LS", test.head), ("network", pred)):
    rep = mt.regression_report(test.truth, est)
    print(f"  {name:8s} " + "  ".join(f"{k} {v:.5f}" for k, v in rep.items()))
print("RMSE ratio network/LS:", round(mt.rmse(test.truth, pred) / mt.rmse(test.truth, test.head), 3))
print("per-axis RMSE network:", mt.rmse_per_axis(test.truth, pred).round(5))
