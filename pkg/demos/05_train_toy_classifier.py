"""Train the hashed CNN on three synthetic shape classes.

Spheres, boxes and pyramids are randomly sized and rotated, voxelized at
16^3 and fed through conv / batch norm / pooling stages on the hash tables,
then two fully connected layers.  Takes a minute or two on a laptop CPU.
"""

import time

from hashconv import net

cfg = net.TrainConfig(lr=0.01, epochs=30, batch_size=16, resolution=16, seed=0)
train_models, train_labels = net.toy_dataset(300, seed=0)
test_models, test_labels = net.toy_dataset(60, seed=1)

start = time.perf_counter()
encoded = [net.encode(m, cfg.resolution, 2, cfg.seed) for m in train_models]
print(f"encoded {len(encoded)} training models in {time.perf_counter() - start:.1f}s")

model = net.HashNet(4, len(net.CLASSES), dropout=cfg.dropout, seed=cfg.seed)
net.fit(model, encoded, train_labels, cfg,
        log=lambda e, lr, loss: print(f"epoch {e:2d}  lr {lr:.0e}  loss {loss:.4f}") if e % 5 == 4 else None)

print(f"train accuracy {net.accuracy(net.predict_scores(model, encoded), train_labels):.3f}")
print(f"test accuracy  {net.evaluate(model, test_models, test_labels, 16):.3f}")
print(f"with 12 upright poses voting  {net.evaluate(model, test_models, test_labels, 16, voting=12):.3f}")
print(f"total {time.perf_counter() - start:.0f}s")
