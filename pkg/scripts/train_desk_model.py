"""Train the desk-scale model shipped in ``wcrr3d/data/desk_model``.

Eight random ellipsoid phantoms on 32^3, desk-scale training defaults
(tiny 2-4-8-8 model, 12^3 patches, 50 epochs, seed 0).
"""
import argparse
import logging
from pathlib import Path

from wcrr3d.training import TrainingConfig, train
from wcrr3d.volume import EllipsoidPhantom, generate_phantom
from wcrr3d.wcrr import save_checkpoint

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "wcrr3d" / "data" / "desk_model"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    vols = [generate_phantom(EllipsoidPhantom.random(s), (32, 32, 32)) for s in range(8)]
    cfg = TrainingConfig.desk(epochs=args.epochs)
    res = train(vols, cfg)
    save_checkpoint(res.model, args.out, dims=(cfg.patch_size,) * 3, seed=cfg.seed,
                    extra={"epoch": cfg.epochs, "config": cfg.model_dump()})
    res.write_history(args.out / "history.csv")


if __name__ == "__main__":
    main()
