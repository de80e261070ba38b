"""Re-create tests/data/ptp_backbone (about 13 minutes on one core).

``python demos/train_backbone.py OUT_DIR``
"""
import sys

from videdit.cli import save_model
from videdit.datagen import fit_backbone
from videdit.prompts import default_catalog
from videdit.schedule import make_schedule

net, losses = fit_backbone(default_catalog(), 6000, 0, make_schedule(), lr=4e-3, batch_size=4,
                           log_fn=lambda k, loss: print(k, round(loss, 4), flush=True) if k % 500 == 0 else None)
save_model(sys.argv[1], net, {"recipe": "fit_backbone(default_catalog(), steps=6000, seed=0, lr=4e-3, batch_size=4)"})
