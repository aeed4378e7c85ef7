import json, time
from spikegrad.training import TrainConfig, train
cfg = TrainConfig(dataset="yinyang", model="qif", loss="integral", hidden=[50],
                  batch_size=256, epochs=3, lr=0.03, workers=2, seed=0,
                  out_dir="/root/pkg/calib/qif_probe")
t0 = time.time()
s = train(cfg)
print("elapsed", time.time() - t0)
print(json.dumps(s, indent=1))
