import json
import os
import random

import flor

hidden_size = flor.arg("hidden", default=500)
num_epochs = flor.arg("epochs", 5)
batch_size = flor.arg("batch_size", 32)
learning_rate = flor.arg("lr", 1e-3)
seed = flor.arg("seed", 1337)

random.seed(seed)

labels = {}
if os.path.exists("labels.json"):
    with open("labels.json") as f:
        labels = json.load(f)

# synthetic per-epoch learning curves
ACC = [0.60, 0.70, 0.75, 0.80, 0.82, 0.83, 0.83, 0.84]
RECALL = [0.50, 0.70, 0.65, 0.80, 0.78, 0.79, 0.80, 0.81]

state = flor.load_ckpt("model")
resume_epoch = state["epoch"] if state else None

trainloader = [0, 1]

for epoch in flor.loop("epoch", range(num_epochs)):
    fast_forward = resume_epoch is not None and epoch < resume_epoch
    for step in flor.loop("step", trainloader):
        if fast_forward:
            continue
        loss = round(2.0 / (1 + epoch * len(trainloader) + step), 4)
        flor.log("loss", loss)
    acc = ACC[epoch % len(ACC)]
    recall = RECALL[epoch % len(RECALL)]
    flor.log("acc", acc)
    if fast_forward:
        continue
    flor.ckpt("model", {
        "epoch": epoch,
        "hidden": hidden_size,
        "batch_size": batch_size,
        "lr": learning_rate,
        "acc": acc,
        "recall": recall,
        "labels": len(labels),
    })
