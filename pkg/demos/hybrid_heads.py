"""
CNN features with classical heads
=================================

Trains the mini CNN on two classes of blob images, then refits the
flattened features with an SVM, a random forest and gradient boosting, and
compares held-out accuracy and AUC.
"""

import numpy as np

from lungkit.hybrid import fit_hybrid
from lungkit.metrics import binary_scores
from lungkit.phantoms import blob_images
from lungkit.preprocess import normalize
from lungkit.tinynet import TrainConfig, build_mini_cnn, predict, train_model

imgs, y = blob_images(200, 32, seed=11)
x = np.stack([normalize(i) for i in imgs])[:, None].astype(np.float32)
tr, te = np.arange(150), np.arange(150, 200)

spec = build_mini_cnn((1, 32, 32), widths=(4, 8), dense=16)
cnn, history = train_model(spec, (x[tr], y[tr]), TrainConfig(lr=3e-3, batch_size=16, max_epochs=20, patience=5, seed=0))
print(f"CNN trained for {len(history)} epochs")

rows = [("cnn", binary_scores(predict(cnn, x[te]), y[te]))]
for head in ("svm", "rf", "gb"):
    model = fit_hybrid(cnn, x[tr], y[tr], head, seed=0)
    labels, scores = model.predict(x[te])
    rows.append((head, binary_scores(scores, y[te], predicted=labels)))

print(f"{'model':6s} {'acc':>6s} {'auc':>6s} {'f1':>6s}")
for name, m in rows:
    print(f"{name:6s} {m['accuracy']:6.3f} {m['auc']:6.3f} {m['f1']:6.3f}")
